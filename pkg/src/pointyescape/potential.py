"""Pointy potentials V(x) = g(x)|x|^(1+alpha) + h(x)|x|^(1+beta).

Angular profiles carry the spherical part of the potential.  Two-dimensional
profiles are written in terms of the polar angle and expose closed-form
derivatives through a numba-compiled scalar *core* ``theta -> (g, g', g'')``;
the same core drives the vectorised analysis routines and the SDE kernel.
"""
from __future__ import annotations

import ast
import math
import operator
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from numba import njit

from .errors import ConfigError, DimensionError, DomainError

UNIT_TOL = 1e-9
FD_STEP = 1e-6
FD_STEP_2 = 1e-4


@njit
def _map_core(core, theta):
    n = theta.size
    g = np.empty(n)
    dg = np.empty(n)
    d2g = np.empty(n)
    for i in range(n):
        g[i], dg[i], d2g[i] = core(theta[i])
    return g, dg, d2g


def _as_points(x):
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        raise DimensionError("points must be vectors")
    return x


def _check_unit(u):
    u = _as_points(u)
    nrm = np.linalg.norm(u, axis=-1)
    if np.any(np.abs(nrm - 1.0) > UNIT_TOL):
        raise DomainError(f"expected unit vectors, got norms deviating by {np.max(np.abs(nrm - 1.0)):.3g}")
    return u


def polar_frame(theta):
    """Return the radial and angular unit vectors ``(u_rho, u_theta)``."""
    c, s = np.cos(theta), np.sin(theta)
    return np.stack([c, s], axis=-1), np.stack([-s, c], axis=-1)


class AngularProfile:
    """Base class for spherical profiles Theta on S^(d-1).

    Subclasses provide ``value``, ``grad`` and ``hess``.  ``grad`` and
    ``hess`` are the Euclidean derivatives of a fixed extension of the
    profile to a neighbourhood of the sphere; the sphere calculus projects
    them onto tangent spaces.
    """

    name = "abstract"
    dim = 2
    #: exponent ``p`` in the boundary sandwich; ``None`` when unknown
    boundary_exponent: float | None = None

    def value(self, u):
        raise NotImplementedError

    def grad(self, u):
        raise NotImplementedError

    def hess(self, u):
        raise NotImplementedError

    def boundary_rate(self, u):
        """Boundary-rate function L evaluated at unit vectors."""
        raise NotImplementedError

    def spec(self) -> dict:
        """Parameters that rebuild the profile through :func:`make_profile`."""
        raise NotImplementedError

    # scalar kernels used by the simulator; ``None`` forces the slow path
    @property
    def core(self):
        return None

    @property
    def nd_core(self):
        return None

    def __repr__(self):
        args = ", ".join(f"{k}={v!r}" for k, v in self.spec().items() if k != "name")
        return f"{type(self).__name__}({args})"


class Profile2D(AngularProfile):
    """A profile on the circle given as a function of the polar angle.

    ``support`` is the open interval ``(theta0, theta1)`` where g may be
    positive, with ``-pi < theta0 < theta1 <= pi``; ``None`` means the whole
    circle.  Outside the closed support g, g', g'' are exactly zero; on the
    boundary g and g' are zero and g'' is the one-sided interior limit.
    """

    dim = 2
    support: tuple[float, float] | None = None

    def _build_core(self):
        raise NotImplementedError

    @cached_property
    def _core(self):
        return self._build_core()

    @property
    def core(self):
        return self._core

    def derivs(self, theta):
        """Return ``(g, g', g'')`` at the given angles (any shape)."""
        theta = np.asarray(theta, dtype=float)
        flat = np.ascontiguousarray(theta.ravel())
        g, dg, d2g = _map_core(self.core, flat)
        return g.reshape(theta.shape), dg.reshape(theta.shape), d2g.reshape(theta.shape)

    def g(self, theta):
        return self.derivs(theta)[0]

    def dg(self, theta):
        return self.derivs(theta)[1]

    def d2g(self, theta):
        return self.derivs(theta)[2]

    def in_support(self, theta):
        theta = np.asarray(theta, dtype=float)
        if self.support is None:
            return np.ones(theta.shape, dtype=bool)
        lo, hi = self.support
        return (theta > lo) & (theta < hi)

    def value(self, u):
        u = _as_points(u)
        return self.g(np.arctan2(u[..., 1], u[..., 0]))

    def grad(self, u):
        u = _as_points(u)
        theta = np.arctan2(u[..., 1], u[..., 0])
        _, dg, _ = self.derivs(theta)
        _, ut = polar_frame(theta)
        return dg[..., None] * ut

    def hess(self, u):
        # Hessian of the 0-homogeneous extension x -> g(arg x), at |x| = 1
        u = _as_points(u)
        theta = np.arctan2(u[..., 1], u[..., 0])
        _, dg, d2g = self.derivs(theta)
        ur, ut = polar_frame(theta)
        tt = ut[..., :, None] * ut[..., None, :]
        rt = ur[..., :, None] * ut[..., None, :]
        return d2g[..., None, None] * tt - dg[..., None, None] * (rt + np.swapaxes(rt, -1, -2))

    def boundary_rate(self, u):
        u = _as_points(u)
        theta = np.arctan2(u[..., 1], u[..., 0])
        if self.support is None:
            return np.ones(theta.shape)
        lo, hi = self.support
        return np.minimum(np.clip(theta - lo, 0.0, None), np.clip(hi - theta, 0.0, None))


def _check_support(support):
    if support is None:
        return None
    lo, hi = (float(v) for v in support)
    if not (-math.pi < lo < hi <= math.pi):
        raise ConfigError(f"support must satisfy -pi < theta0 < theta1 <= pi, got ({lo}, {hi})")
    return lo, hi


# --------------------------------------------------------------------------
# builtin profiles

_REGISTRY: dict = {}


def register_profile(name):
    def deco(factory):
        _REGISTRY[name] = factory
        return factory
    return deco


def available_profiles():
    return sorted(_REGISTRY)


def make_profile(name, **params) -> AngularProfile:
    """Build a registered profile by name."""
    try:
        factory = _REGISTRY[name]
    except KeyError:
        raise ConfigError(f"unknown profile {name!r}; known: {', '.join(available_profiles())}") from None
    try:
        return factory(**params)
    except TypeError as exc:
        raise ConfigError(f"bad parameters for profile {name!r}: {exc}") from None


@register_profile("sec7")
class Sec7Profile(Profile2D):
    """g(theta) = 2/(1.5 + tan^2 theta) - 2cos^4 theta + cos^2 theta on (-pi/2, pi/2).

    With w = cos^2 theta the first term is 4w/(2 + w), so g = G(w) is smooth
    up to the boundary, where G(0) = 0 and g''(+-pi/2) = 6.
    """

    name = "sec7"
    support = (-math.pi / 2, math.pi / 2)
    boundary_exponent = 1.0

    def _build_core(self):
        lo, hi = self.support

        @njit
        def core(th):
            if th < lo or th > hi:
                return 0.0, 0.0, 0.0
            c = math.cos(th)
            w = c * c
            q = 2.0 + w
            G = 4.0 * w / q + w - 2.0 * w * w
            G1 = 8.0 / (q * q) + 1.0 - 4.0 * w
            G2 = -16.0 / (q * q * q) - 4.0
            w1 = -math.sin(2.0 * th)
            w2 = -2.0 * math.cos(2.0 * th)
            d2 = G2 * w1 * w1 + G1 * w2
            if th == lo or th == hi:
                return 0.0, 0.0, d2
            return G, G1 * w1, d2

        return core

    def spec(self):
        return {"name": "sec7"}


@register_profile("radial")
class RadialProfile(Profile2D):
    """Spherically constant profile g = level (any dimension)."""

    name = "radial"
    boundary_exponent = 1.0

    def __init__(self, level=1.0, dim=2):
        if level < 0:
            raise ConfigError("radial level must be non-negative")
        if dim < 2:
            raise ConfigError("dimension must be at least 2")
        self.level = float(level)
        self.dim = int(dim)

    def _build_core(self):
        level = self.level

        @njit
        def core(th):
            return level, 0.0, 0.0

        return core

    @cached_property
    def _nd_core(self):
        level = self.level

        @njit
        def core(u, grad):
            grad[:] = 0.0
            return level

        return core

    @property
    def nd_core(self):
        return self._nd_core

    def value(self, u):
        u = _as_points(u)
        return np.full(u.shape[:-1], self.level)

    def grad(self, u):
        return np.zeros_like(_as_points(u))

    def hess(self, u):
        u = _as_points(u)
        return np.zeros(u.shape + (u.shape[-1],))

    def boundary_rate(self, u):
        return np.ones(_as_points(u).shape[:-1])

    def spec(self):
        return {"name": "radial", "level": self.level, "dim": self.dim}


def _series(coef_cos, coef_sin):
    n = max(len(coef_cos), len(coef_sin), 1)
    a = np.zeros(n)
    b = np.zeros(n)
    a[: len(coef_cos)] = coef_cos
    b[: len(coef_sin)] = coef_sin
    return a, b


class PowCosProfile(Profile2D):
    """Trigonometric family ``scale * E(theta)_+^power * M(theta)`` on a support.

    E and M are finite Fourier series given by their cosine and sine
    coefficients (index k multiplies ``cos(k theta)`` / ``sin(k theta)``).
    When E has simple zeros at the support ends the boundary exponent is
    ``power - 1``.
    """

    name = "bump2d"
    family = "powcos"

    def __init__(self, support=(-math.pi / 2, math.pi / 2), envelope_cos=(0.0, 1.0), envelope_sin=(),
                 power=2.0, modulation_cos=(1.0,), modulation_sin=(), scale=1.0):
        self.support = _check_support(support)
        self.envelope_cos = tuple(float(v) for v in envelope_cos)
        self.envelope_sin = tuple(float(v) for v in envelope_sin)
        self.modulation_cos = tuple(float(v) for v in modulation_cos)
        self.modulation_sin = tuple(float(v) for v in modulation_sin)
        self.power = float(power)
        self.scale = float(scale)
        if self.power < 1.0:
            raise ConfigError("powcos power must be >= 1 for a C^1 profile")
        self.boundary_exponent = self.power - 1.0

    def _build_core(self):
        ea, eb = _series(self.envelope_cos, self.envelope_sin)
        ma, mb = _series(self.modulation_cos, self.modulation_sin)
        lo, hi = self.support if self.support is not None else (-math.inf, math.inf)
        q = self.power
        scale = self.scale

        @njit
        def core(th):
            if th < lo or th > hi:
                return 0.0, 0.0, 0.0
            E = 0.0
            E1 = 0.0
            E2 = 0.0
            for k in range(ea.size):
                c = math.cos(k * th)
                s = math.sin(k * th)
                E += ea[k] * c + eb[k] * s
                E1 += k * (eb[k] * c - ea[k] * s)
                E2 -= k * k * (ea[k] * c + eb[k] * s)
            M = 0.0
            M1 = 0.0
            M2 = 0.0
            for k in range(ma.size):
                c = math.cos(k * th)
                s = math.sin(k * th)
                M += ma[k] * c + mb[k] * s
                M1 += k * (mb[k] * c - ma[k] * s)
                M2 -= k * k * (ma[k] * c + mb[k] * s)
            if E <= 0.0:
                if q == 2.0:
                    G2 = 2.0 * E1 * E1
                elif q > 2.0:
                    G2 = 0.0
                else:
                    G2 = math.inf
                return 0.0, 0.0, scale * G2 * M
            G = E ** q
            G1 = q * E ** (q - 1.0) * E1
            G2 = q * (q - 1.0) * E ** (q - 2.0) * E1 * E1 + q * E ** (q - 1.0) * E2
            g = scale * G * M
            g1 = scale * (G1 * M + G * M1)
            g2 = scale * (G2 * M + 2.0 * G1 * M1 + G * M2)
            if th == lo or th == hi:
                return 0.0, 0.0, g2
            return g, g1, g2

        return core

    def spec(self):
        return {"name": "bump2d", "family": "powcos", "support": self.support,
                "envelope_cos": self.envelope_cos, "envelope_sin": self.envelope_sin,
                "power": self.power, "modulation_cos": self.modulation_cos,
                "modulation_sin": self.modulation_sin, "scale": self.scale}


class LogWobbleProfile(Profile2D):
    """``scale * s^3 (1 + b sin(k ln s))`` with s = (t - t0)(t1 - t)/(t1 - t0).

    The profile is C^{1,1} and non-negative for ``|b| < 1``, but for
    ``|b| (k^2 + 5k) > 6`` its second derivative changes sign infinitely often
    near the support ends, so the Laplacian of V is negative on a sequence of
    angles accumulating at the boundary.
    """

    name = "bump2d"
    family = "log-wobble"
    boundary_exponent = 2.0

    def __init__(self, support=(-math.pi / 2, math.pi / 2), amplitude=0.9, frequency=8.0, scale=1.0):
        self.support = _check_support(support)
        if self.support is None:
            raise ConfigError("log-wobble needs a bounded support")
        if not abs(amplitude) < 1.0:
            raise ConfigError("log-wobble amplitude must lie in (-1, 1)")
        self.amplitude = float(amplitude)
        self.frequency = float(frequency)
        self.scale = float(scale)

    def _build_core(self):
        lo, hi = self.support
        width = hi - lo
        b, k, scale = self.amplitude, self.frequency, self.scale

        @njit
        def core(th):
            if th <= lo or th >= hi:
                return 0.0, 0.0, 0.0
            s = (th - lo) * (hi - th) / width
            s1 = (hi + lo - 2.0 * th) / width
            s2 = -2.0 / width
            ls = math.log(s)
            sn = math.sin(k * ls)
            cs = math.cos(k * ls)
            f = s ** 3 * (1.0 + b * sn)
            f1 = s * s * (3.0 * (1.0 + b * sn) + b * k * cs)
            f2 = s * (6.0 + b * (6.0 - k * k) * sn + 5.0 * b * k * cs)
            return scale * f, scale * f1 * s1, scale * (f2 * s1 * s1 + f1 * s2)

        return core

    def spec(self):
        return {"name": "bump2d", "family": "log-wobble", "support": self.support,
                "amplitude": self.amplitude, "frequency": self.frequency, "scale": self.scale}


class CallableProfile(Profile2D):
    """User-supplied g(theta) with central finite-difference derivatives.

    ``func`` must accept numpy arrays.  It is only evaluated on the open
    support; the simulator falls back to an interpreted loop for this class.
    """

    name = "callable"

    def __init__(self, func, support=None, boundary_exponent=None, label="callable"):
        self.func = func
        self.support = _check_support(support)
        self.boundary_exponent = boundary_exponent
        self.label = label

    def derivs(self, theta):
        theta = np.asarray(theta, dtype=float)
        f = self.func
        h, h2 = FD_STEP, FD_STEP_2
        g = np.asarray(f(theta), dtype=float) * np.ones(theta.shape)
        dg = (np.asarray(f(theta + h)) - np.asarray(f(theta - h))) / (2.0 * h)
        d2g = (np.asarray(f(theta + h2)) - 2.0 * g + np.asarray(f(theta - h2))) / (h2 * h2)
        mask = self.in_support(theta)
        return np.where(mask, g, 0.0), np.where(mask, dg, 0.0), np.where(mask, d2g, 0.0)

    def _build_core(self):
        def core(th):
            g, dg, d2g = self.derivs(np.array([th]))
            return float(g[0]), float(dg[0]), float(d2g[0])
        return core

    @property
    def core(self):
        # interpreted on purpose: arbitrary Python callables cannot be compiled
        return self._core

    def spec(self):
        return {"name": "callable", "label": self.label, "support": self.support}


class ScaledProfile(Profile2D):
    """``factor * base`` for a compiled two-dimensional profile."""

    def __init__(self, base: Profile2D, factor: float):
        if factor <= 0:
            raise ConfigError("scale factor must be positive")
        self.base = base
        self.factor = float(factor)
        self.support = base.support
        self.boundary_exponent = base.boundary_exponent
        self.name = base.name

    def _build_core(self):
        inner = self.base.core
        lam = self.factor

        @njit
        def core(th):
            g, dg, d2g = inner(th)
            return lam * g, lam * dg, lam * d2g

        return core

    def spec(self):
        return {"name": "scaled", "base": self.base.spec(), "factor": self.factor}


@register_profile("bump2d")
def bump_profile(family="powcos", **params):
    """Closed-form two-dimensional bump families, selected by ``family``."""
    families = {"powcos": PowCosProfile, "log-wobble": LogWobbleProfile}
    try:
        cls = families[family]
    except KeyError:
        raise ConfigError(f"unknown bump2d family {family!r}; known: {', '.join(sorted(families))}") from None
    return cls(**params)


@register_profile("spherical-d")
class SphericalCapProfile(AngularProfile):
    """Cap profile ``g(u) = scale * (n.u)_+^2 * (1 + u^T Q u)`` in any dimension.

    The formula is used verbatim off the sphere as the extension; L = (n.u)_+
    and p = 1.
    """

    name = "spherical-d"
    boundary_exponent = 1.0

    def __init__(self, dim=3, axis=None, quad=None, scale=1.0):
        self.dim = int(dim)
        if self.dim < 2:
            raise ConfigError("dimension must be at least 2")
        axis = np.eye(self.dim)[0] if axis is None else np.asarray(axis, dtype=float)
        if axis.shape != (self.dim,) or np.linalg.norm(axis) == 0:
            raise ConfigError("axis must be a non-zero vector of length dim")
        self.axis = axis / np.linalg.norm(axis)
        quad = np.zeros((self.dim, self.dim)) if quad is None else np.asarray(quad, dtype=float)
        if quad.shape != (self.dim, self.dim):
            raise ConfigError("quad must be a dim x dim matrix")
        self.quad = 0.5 * (quad + quad.T)
        if np.linalg.eigvalsh(self.quad).min() <= -1.0:
            raise ConfigError("1 + u^T Q u must stay positive on the sphere")
        self.scale = float(scale)

    def _parts(self, u):
        u = _as_points(u)
        ell = u @ self.axis
        lp = np.clip(ell, 0.0, None)
        Qu = u @ self.quad
        m = 1.0 + np.sum(u * Qu, axis=-1)
        return u, lp, Qu, m

    def value(self, u):
        _, lp, _, m = self._parts(u)
        return self.scale * lp * lp * m

    def grad(self, u):
        _, lp, Qu, m = self._parts(u)
        return self.scale * (2.0 * (lp * m)[..., None] * self.axis + 2.0 * (lp * lp)[..., None] * Qu)

    def hess(self, u):
        _, lp, Qu, m = self._parts(u)
        n = self.axis
        nn = np.outer(n, n)
        nQ = n[..., :, None] * Qu[..., None, :]
        on = (lp > 0).astype(float)
        return self.scale * (2.0 * (on * m)[..., None, None] * nn
                             + 4.0 * lp[..., None, None] * (nQ + np.swapaxes(nQ, -1, -2))
                             + 2.0 * (lp * lp)[..., None, None] * self.quad)

    def boundary_rate(self, u):
        return self._parts(u)[1]

    @cached_property
    def _nd_core(self):
        n = self.axis.copy()
        Q = self.quad.copy()
        scale = self.scale
        d = self.dim

        @njit
        def core(u, grad):
            ell = 0.0
            for i in range(d):
                ell += n[i] * u[i]
            if ell <= 0.0:
                grad[:] = 0.0
                return 0.0
            m = 1.0
            for i in range(d):
                qi = 0.0
                for j in range(d):
                    qi += Q[i, j] * u[j]
                grad[i] = qi
                m += u[i] * qi
            for i in range(d):
                grad[i] = scale * (2.0 * ell * m * n[i] + 2.0 * ell * ell * grad[i])
            return scale * ell * ell * m

        return core

    @property
    def nd_core(self):
        return self._nd_core

    def spec(self):
        return {"name": "spherical-d", "dim": self.dim, "axis": self.axis.tolist(),
                "quad": self.quad.tolist(), "scale": self.scale}


# --------------------------------------------------------------------------
# text specs for custom profiles

_BINOPS = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul, ast.Div: operator.truediv}


def _eval_number(text: str) -> float:
    def ev(node):
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
            return float(node.value)
        if isinstance(node, ast.Name) and node.id == "pi":
            return math.pi
        if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
            v = ev(node.operand)
            return -v if isinstance(node.op, ast.USub) else v
        if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
            return _BINOPS[type(node.op)](ev(node.left), ev(node.right))
        raise ValueError(text)

    try:
        return ev(ast.parse(text.strip(), mode="eval").body)
    except (SyntaxError, ValueError):
        raise ConfigError(f"cannot parse number {text!r}") from None


parse_number = _eval_number


def parse_number_list(text: str) -> tuple[float, ...]:
    text = text.strip()
    if not text:
        return ()
    return tuple(_eval_number(tok) for tok in text.split(","))


_SCALAR_KEYS = {"power", "scale", "amplitude", "frequency", "level", "dim"}
_LIST_KEYS = {"support", "envelope_cos", "envelope_sin", "modulation_cos", "modulation_sin", "axis"}


def profile_from_mapping(entries: dict) -> AngularProfile:
    """Build a profile from string-valued ``key -> value`` entries.

    Recognised keys: ``name`` (registry name), ``family`` (for bump2d), the
    list-valued ``support``, ``envelope_cos``, ``envelope_sin``,
    ``modulation_cos``, ``modulation_sin``, ``axis`` and the scalars
    ``power``, ``scale``, ``amplitude``, ``frequency``, ``level``, ``dim``.
    Numbers may use ``pi`` and ``+ - * /``.
    """
    entries = {k.strip(): v.strip() for k, v in entries.items()}
    name = entries.pop("name", None)
    if not name:
        raise ConfigError("profile spec needs a 'name'")
    params: dict = {}
    for key, raw in entries.items():
        if key == "family":
            params[key] = raw
        elif key in _LIST_KEYS:
            params[key] = parse_number_list(raw)
        elif key in _SCALAR_KEYS:
            val = _eval_number(raw)
            params[key] = int(val) if key == "dim" else val
        else:
            raise ConfigError(f"unknown profile key {key!r}")
    return make_profile(name, **params)


def parse_profile_text(text: str) -> AngularProfile:
    """Parse ``key = value`` lines (``#`` starts a comment) into a profile."""
    entries = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, val = line.split("=", 1)
        entries[key.strip()] = val
    return profile_from_mapping(entries)


# --------------------------------------------------------------------------
# the potential


@dataclass(frozen=True)
class PotentialModel:
    """Angular profile(s) plus radial exponents.

    ``h`` is an optional two-dimensional profile of arbitrary sign whose
    support must be disjoint from that of ``profile``.  When ``h`` is absent
    ``beta`` defaults to 1 (any admissible value gives the same V).
    """

    profile: AngularProfile
    alpha: float = 0.5
    beta: float | None = None
    h: Profile2D | None = None
    beta_defaulted: bool = field(default=False, init=False)

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.beta is None:
            object.__setattr__(self, "beta", 1.0)
            object.__setattr__(self, "beta_defaulted", True)
        if not self.alpha < self.beta <= 1.0:
            raise ConfigError(f"beta must lie in (alpha, 1], got {self.beta}")
        if self.h is not None:
            if not (isinstance(self.h, Profile2D) and self.profile.dim == 2):
                raise ConfigError("the h part is only supported for two-dimensional models")
            s1, s2 = getattr(self.profile, "support", None), self.h.support
            if s1 is None or s2 is None or not (s1[1] <= s2[0] or s2[1] <= s1[0]):
                raise ConfigError("supports of g and h must be disjoint intervals")

    @property
    def dim(self) -> int:
        return self.profile.dim

    @property
    def is_polar(self) -> bool:
        return isinstance(self.profile, Profile2D) and self.profile.dim == 2

    # residuals of the radial/angular split; zero for every builtin profile
    def eta(self, x):
        return np.zeros(_as_points(x).shape[:-1])

    def eta_prime(self, x):
        return np.zeros_like(_as_points(x))

    def metadata(self) -> dict:
        return {"profile": self.profile.spec(), "alpha": self.alpha, "beta": self.beta,
                "beta_defaulted": self.beta_defaulted,
                "h": None if self.h is None else self.h.spec(), "residuals": "zero"}

    def V(self, x):
        return eval_V(self, x)

    def grad(self, x):
        return grad_V(self, x)

    def laplacian(self, x):
        return laplacian_V(self, x)


def _split(x):
    x = _as_points(x)
    r = np.linalg.norm(x, axis=-1)
    safe = np.where(r > 0, r, 1.0)
    return x, r, x / safe[..., None]


def eval_V(model: PotentialModel, x):
    """Potential at points ``x`` of shape ``(d,)`` or ``(..., d)``; V(0) = 0."""
    x, r, u = _split(x)
    V = model.profile.value(u) * r ** (1.0 + model.alpha)
    if model.h is not None:
        V = V + model.h.value(u) * r ** (1.0 + model.beta)
    return np.where(r > 0, V, 0.0)


def _grad_polar(model, x, r):
    theta = np.arctan2(x[..., 1], x[..., 0])
    ur, ut = polar_frame(theta)
    g, dg, _ = model.profile.derivs(theta)
    ra = r ** model.alpha
    out = ((1.0 + model.alpha) * g * ra)[..., None] * ur + (dg * ra)[..., None] * ut
    if model.h is not None:
        h, dh, _ = model.h.derivs(theta)
        rb = r ** model.beta
        out = out + ((1.0 + model.beta) * h * rb)[..., None] * ur + (dh * rb)[..., None] * ut
    return out


def _grad_general(model, x, r, u):
    ra = (r ** model.alpha)[..., None]
    G = model.profile.grad(u)
    tang = G - np.sum(G * u, axis=-1, keepdims=True) * u
    out = ra * tang + (1.0 + model.alpha) * model.profile.value(u)[..., None] * ra * u
    if model.h is not None:
        rb = (r ** model.beta)[..., None]
        H = model.h.grad(u)
        tang_h = H - np.sum(H * u, axis=-1, keepdims=True) * u
        out = out + rb * tang_h + (1.0 + model.beta) * model.h.value(u)[..., None] * rb * u
    return out


def grad_V(model: PotentialModel, x):
    """Gradient of V; the zero vector at the origin."""
    x, r, u = _split(x)
    out = _grad_polar(model, x, r) if model.is_polar else _grad_general(model, x, r, u)
    return np.where((r > 0)[..., None], out, 0.0)


def _sphere_laplacian(profile, u):
    d = u.shape[-1]
    G = profile.grad(u)
    H = profile.hess(u)
    P = np.eye(d) - u[..., :, None] * u[..., None, :]
    tr = np.einsum("...ij,...jk,...ki->...", P, H, P)
    return tr - (d - 1) * np.sum(u * G, axis=-1)


def laplacian_V(model: PotentialModel, x):
    """Closed-form Laplacian of V away from the origin."""
    x, r, u = _split(x)
    if np.any(r == 0):
        raise DomainError("the Laplacian of V is not defined at the origin")
    a = model.alpha
    if model.is_polar:
        theta = np.arctan2(x[..., 1], x[..., 0])
        g, _, d2g = model.profile.derivs(theta)
        lap = ((1.0 + a) ** 2 * g + d2g) * r ** (a - 1.0)
        if model.h is not None:
            b = model.beta
            h, _, d2h = model.h.derivs(theta)
            lap = lap + ((1.0 + b) ** 2 * h + d2h) * r ** (b - 1.0)
        return lap
    d = x.shape[-1]
    g = model.profile.value(u)
    return r ** (a - 1.0) * (_sphere_laplacian(model.profile, u) + (1.0 + a) * (d - 1.0 + a) * g)


def hessian_V(model: PotentialModel, x, step=FD_STEP):
    """Full Hessian of V (closed form in 2D, central differences of grad_V otherwise).

    The difference step is ``step * |x|`` so it scales with the distance to
    the singular point.
    """
    x, r, u = _split(x)
    if np.any(r == 0):
        raise DomainError("the Hessian of V is not defined at the origin")
    if model.is_polar and model.h is None:
        a = model.alpha
        theta = np.arctan2(x[..., 1], x[..., 0])
        ur, ut = polar_frame(theta)
        g, dg, d2g = model.profile.derivs(theta)
        rr = ur[..., :, None] * ur[..., None, :]
        rt = ur[..., :, None] * ut[..., None, :]
        tt = ut[..., :, None] * ut[..., None, :]
        c = r ** (a - 1.0)
        H = ((1.0 + a) * a * g)[..., None, None] * rr + (a * dg)[..., None, None] * (rt + np.swapaxes(rt, -1, -2)) \
            + (d2g + (1.0 + a) * g)[..., None, None] * tt
        return c[..., None, None] * H
    d = x.shape[-1]
    h = step * r[..., None]
    cols = []
    for i in range(d):
        e = np.zeros(d)
        e[i] = 1.0
        cols.append((grad_V(model, x + h * e) - grad_V(model, x - h * e)) / (2.0 * h))
    H = np.stack(cols, axis=-1)
    return 0.5 * (H + np.swapaxes(H, -1, -2))


# --------------------------------------------------------------------------
# sphere calculus


def theta_value(profile: AngularProfile, u):
    return profile.value(_check_unit(u))


def grad_sphere_theta(profile: AngularProfile, u):
    """Riemannian gradient (I - u u^T) grad Theta(u), a tangent vector at u."""
    u = _check_unit(u)
    G = profile.grad(u)
    return G - np.sum(G * u, axis=-1, keepdims=True) * u


def hess_sphere_theta(profile: AngularProfile, u):
    """Riemannian Hessian (I - u u^T)[Hess Theta(u) - (u . grad Theta(u)) I]."""
    u = _check_unit(u)
    d = u.shape[-1]
    P = np.eye(d) - u[..., :, None] * u[..., None, :]
    radial = np.sum(u * profile.grad(u), axis=-1)
    return P @ (profile.hess(u) - radial[..., None, None] * np.eye(d))
