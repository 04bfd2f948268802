"""Deterministic angular gradient flow phi' = grad Theta(phi) on the sphere.

In two dimensions the flow reduces to the scalar ODE ``theta' = g'(theta)``
and is integrated directly in the angle; in higher dimension RK4 steps are
taken in the ambient space and renormalised onto the sphere.
"""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from numba import njit
from scipy.integrate import solve_ivp

from .errors import DegenerateProfile, DomainError
from .potential import AngularProfile, Profile2D, UNIT_TOL, grad_sphere_theta, hess_sphere_theta

T_CAP = 1e4
DEFAULT_DT = 1e-3
BISECT_TOL = 1e-10
PLATEAU_TOL = 1e-12
TWO_PI = 2.0 * math.pi


def wrap_angle(theta):
    """Map angles into (-pi, pi]."""
    theta = np.asarray(theta, dtype=float)
    out = np.mod(theta + math.pi, TWO_PI) - math.pi
    return np.where(out == -math.pi, math.pi, out)


def _is_polar(profile):
    return isinstance(profile, Profile2D) and profile.dim == 2


@dataclass
class FlowPath:
    times: np.ndarray
    points: np.ndarray
    theta_values: np.ndarray
    angles: np.ndarray | None = None

    @property
    def terminal(self):
        return self.points[-1]

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            if self.angles is not None:
                w.writerow(["t", "angle", "Theta"])
                for t, a, v in zip(self.times, self.angles, self.theta_values):
                    w.writerow([f"{t:.10g}", f"{a:.12g}", f"{v:.12g}"])
            else:
                d = self.points.shape[1]
                w.writerow(["t"] + [f"u{i + 1}" for i in range(d)] + ["Theta"])
                for t, p, v in zip(self.times, self.points, self.theta_values):
                    w.writerow([f"{t:.10g}"] + [f"{c:.12g}" for c in p] + [f"{v:.12g}"])


@njit
def _rk4_angle(core, theta0, h, n):
    out = np.empty(n + 1)
    th = theta0
    out[0] = th
    for k in range(n):
        k1 = core(th)[1]
        k2 = core(th + 0.5 * h * k1)[1]
        k3 = core(th + 0.5 * h * k2)[1]
        k4 = core(th + h * k3)[1]
        th = th + h * (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0
        out[k + 1] = th
    return out


def angle_trajectory(profile: Profile2D, theta0: float, h: float, n: int) -> np.ndarray:
    """RK4 iterates of ``theta' = g'(theta)`` with step h (unwrapped angles)."""
    core = profile.core
    if hasattr(core, "py_func"):
        return _rk4_angle(core, float(theta0), float(h), int(n))
    return _rk4_angle.py_func(core, float(theta0), float(h), int(n))


def _embedded_field(profile):
    def field_(phi):
        u = phi / np.linalg.norm(phi)
        return grad_sphere_theta(profile, u)
    return field_


def integrate_flow(profile: AngularProfile, u0, t_end: float, dt: float = DEFAULT_DT) -> FlowPath:
    """Integrate the sphere flow from ``u0`` up to ``t_end``.

    The step is adjusted to ``t_end / round(t_end / dt)`` so that the last
    sample lands on ``t_end``.
    """
    u0 = np.asarray(u0, dtype=float)
    if abs(np.linalg.norm(u0) - 1.0) > UNIT_TOL:
        raise DomainError("initial point must be a unit vector")
    if dt <= 0 or t_end < 0:
        raise DomainError("dt must be positive and t_end non-negative")
    n = max(1, int(round(t_end / dt))) if t_end > 0 else 0
    h = t_end / n if n else 0.0
    times = h * np.arange(n + 1)
    if _is_polar(profile):
        ang = angle_trajectory(profile, math.atan2(u0[1], u0[0]), h, n)
        pts = np.stack([np.cos(ang), np.sin(ang)], axis=1)
        return FlowPath(times, pts, profile.g(wrap_angle(ang)), angles=ang)
    f = _embedded_field(profile)
    pts = np.empty((n + 1, u0.size))
    phi = u0.copy()
    pts[0] = phi
    for k in range(n):
        k1 = f(phi)
        k2 = f(phi + 0.5 * h * k1)
        k3 = f(phi + 0.5 * h * k2)
        k4 = f(phi + h * k3)
        phi = phi + h * (k1 + 2 * k2 + 2 * k3 + k4) / 6.0
        phi /= np.linalg.norm(phi)
        pts[k + 1] = phi
    return FlowPath(times, pts, profile.value(pts))


# --------------------------------------------------------------------------
# critical sets


@dataclass
class Maximum:
    """A local maximum of Theta; an arc when ``lo < hi`` (2D plateaus)."""

    lo: float | np.ndarray
    hi: float | np.ndarray
    value: float

    @property
    def location(self):
        if isinstance(self.lo, np.ndarray):
            return self.lo
        return 0.5 * (self.lo + self.hi)


@dataclass
class Well:
    center: float | np.ndarray
    value: float
    radius: float
    level: float
    convexity: float


@dataclass
class CriticalSets:
    maxima: list = field(default_factory=list)
    minima: list = field(default_factory=list)
    degenerate: bool = False
    dim: int = 2

    def max_locations(self):
        return [m.location for m in self.maxima]

    def distance(self, x):
        """Geodesic distance from angles (2D) or unit vectors to the maxima set."""
        if not self.maxima:
            return np.full(np.shape(x)[:-1] if self.dim > 2 else np.shape(x), np.inf)
        if self.dim == 2:
            th = np.asarray(x, dtype=float)
            best = np.full(th.shape, np.inf)
            for m in self.maxima:
                inside = _arc_contains(m.lo, m.hi, th)
                dlo = np.abs(wrap_angle(th - m.lo))
                dhi = np.abs(wrap_angle(th - m.hi))
                best = np.minimum(best, np.where(inside, 0.0, np.minimum(dlo, dhi)))
            return best
        u = np.asarray(x, dtype=float)
        best = np.full(u.shape[:-1], np.inf)
        for m in self.maxima:
            best = np.minimum(best, np.arccos(np.clip(u @ m.location, -1.0, 1.0)))
        return best

    def to_dict(self):
        def conv(v):
            return v.tolist() if isinstance(v, np.ndarray) else float(v)
        return {
            "degenerate": self.degenerate,
            "maxima": [{"lo": conv(m.lo), "hi": conv(m.hi), "value": m.value} for m in self.maxima],
            "minima": [{"center": conv(w.center), "value": w.value, "radius": w.radius,
                        "level": w.level, "convexity": w.convexity} for w in self.minima],
        }


def _arc_contains(lo, hi, th):
    return (wrap_angle(th - lo) >= 0) & (wrap_angle(th - lo) <= hi - lo)


def _bisect_zero(f, a, b, fa):
    while b - a > BISECT_TOL:
        m = 0.5 * (a + b)
        fm = f(m)
        if fm == 0.0:
            return m
        if (fm > 0) == (fa > 0):
            a, fa = m, fm
        else:
            b = m
    return 0.5 * (a + b)


def _classify(profile, th, span):
    g0, _, d2 = (float(v[0]) for v in profile.derivs(np.array([th])))
    if d2 < 0:
        return "max"
    if d2 > 0:
        return "min"
    gl = float(profile.g(np.array([th - span]))[0])
    gr = float(profile.g(np.array([th + span]))[0])
    if gl < g0 and gr < g0:
        return "max"
    if gl > g0 and gr > g0:
        return "min"
    return "saddle"


def _well_2d(profile, center, neighbours, value):
    d2c = float(profile.d2g(np.array([center]))[0])
    limit = 0.5 * min((abs(wrap_angle(center - n)) for n in neighbours), default=math.pi / 2)
    grid = np.linspace(0.0, limit, 401)[1:]
    ok = 0.0
    for e in grid:
        d2 = profile.d2g(np.array([center - e, center + e]))
        if d2.min() < 0.25 * d2c:
            break
        ok = e
    if ok == 0.0:
        ok = grid[0]
    side = profile.g(np.array([center - ok, center + ok]))
    level = value + 0.5 * (float(side.min()) - value)
    ball = np.linspace(center - ok, center + ok, 201)
    return Well(center=float(wrap_angle(center)), value=value, radius=float(ok), level=float(level),
                convexity=float(profile.d2g(ball).min()))


def _critical_2d(profile: Profile2D, resolution: int) -> CriticalSets:
    full = profile.support is None
    if full:
        grid = np.linspace(-math.pi, math.pi, resolution + 1)
    else:
        lo, hi = profile.support
        grid = np.linspace(lo, hi, resolution + 2)[1:-1]
    g, dg, _ = profile.derivs(grid)
    if g.max() - g.min() < PLATEAU_TOL:
        warnings.warn("Theta is constant on its support", DegenerateProfile, stacklevel=3)
        return CriticalSets(degenerate=True, dim=2)

    def fprime(t):
        return float(profile.dg(np.array([t]))[0])

    span = grid[1] - grid[0]
    zeros = []  # (lo, hi): isolated zeros have lo == hi, exact flat runs lo < hi
    n = grid.size
    k = 0
    while k < n - 1:
        a, b = dg[k], dg[k + 1]
        if a == 0.0:
            j = k
            while j + 1 < n and dg[j + 1] == 0.0:
                j += 1
            zeros.append((grid[k], grid[j]))
            k = j + 1
            continue
        if b != 0.0 and (a > 0) != (b > 0):
            z = _bisect_zero(fprime, grid[k], grid[k + 1], a)
            zeros.append((z, z))
        k += 1
    if dg[-1] == 0.0 and (not zeros or zeros[-1][1] < grid[-1]):
        zeros.append((grid[-1], grid[-1]))
    if full and len(zeros) > 1 and zeros[0][0] == -math.pi and zeros[-1][1] == math.pi:
        zeros.pop()
    pts = []
    for zlo, zhi in zeros:
        val = float(profile.g(np.array([zlo]))[0])
        if val <= 0.0:
            continue
        if zhi > zlo:
            left = float(profile.g(np.array([zlo - span]))[0])
            right = float(profile.g(np.array([zhi + span]))[0])
            kind = "max" if left < val and right < val else ("min" if left > val and right > val else "saddle")
        else:
            kind = _classify(profile, zlo, span)
        pts.append([kind, zlo, zhi, val])
    # merge adjacent zeros of the same kind that bound a flat stretch
    merged = []
    for p in pts:
        if merged and merged[-1][0] == p[0] and abs(merged[-1][3] - p[3]) < PLATEAU_TOL:
            mid = 0.5 * (merged[-1][2] + p[1])
            if abs(float(profile.g(np.array([mid]))[0]) - p[3]) < PLATEAU_TOL:
                merged[-1][2] = p[2]
                continue
        merged.append(p)
    crit = CriticalSets(dim=2)
    locations = [0.5 * (p[1] + p[2]) for p in merged]
    for i, (kind, zlo, zhi, val) in enumerate(merged):
        if kind == "max":
            crit.maxima.append(Maximum(float(wrap_angle(zlo)), float(wrap_angle(zlo) + (zhi - zlo)), val))
        elif kind == "min":
            others = locations[:i] + locations[i + 1:]
            if not full:
                others = others + [profile.support[0], profile.support[1]]
            crit.minima.append(_well_2d(profile, zlo, others, val))
    return crit


def _fibonacci_sphere(n, d):
    if d == 3:
        i = np.arange(n) + 0.5
        z = 1.0 - 2.0 * i / n
        phi = math.pi * (1.0 + 5 ** 0.5) * i
        s = np.sqrt(1.0 - z * z)
        return np.stack([s * np.cos(phi), s * np.sin(phi), z], axis=1)
    x = np.random.default_rng(12345).standard_normal((n, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def _descend(profile, u, sign, h=0.05, steps=4000, tol=1e-10):
    for _ in range(steps):
        gr = grad_sphere_theta(profile, u)
        if np.max(np.linalg.norm(gr, axis=-1)) < tol:
            break
        u = u + sign * h * gr
        u = u / np.linalg.norm(u, axis=-1, keepdims=True)
    return u


def _cluster(points, tol=1e-4):
    reps = np.empty((0, points.shape[1]))
    for p in points:
        if reps.shape[0] == 0 or np.min(np.linalg.norm(reps - p, axis=1)) >= tol:
            reps = np.vstack([reps, p])
    return list(reps)


def _critical_nd(profile: AngularProfile, resolution: int) -> CriticalSets:
    d = profile.dim
    samples = _fibonacci_sphere(max(resolution, 64), d)
    vals = profile.value(samples)
    pos = samples[vals > 0]
    if pos.size == 0 or vals.max() - vals[vals > 0].min() < PLATEAU_TOL:
        warnings.warn("Theta is constant on its support", DegenerateProfile, stacklevel=3)
        return CriticalSets(degenerate=True, dim=d)
    crit = CriticalSets(dim=d)
    for u in _cluster(_descend(profile, pos, +1.0)):
        v = float(profile.value(u))
        if v > 0:
            crit.maxima.append(Maximum(u, u, v))
    low = _descend(profile, pos, -1.0)
    keep = (profile.value(low) > 1e-12) & (np.linalg.norm(grad_sphere_theta(profile, low), axis=-1) <= 1e-8)
    for u in _cluster(low[keep]):
        v = float(profile.value(u))
        H = hess_sphere_theta(profile, u)
        P = np.eye(d) - np.outer(u, u)
        Ht = P @ H @ P
        eig = np.linalg.eigvalsh(0.5 * (Ht + Ht.T))
        tang = eig[np.argsort(np.abs(eig))][1:]  # drop the normal direction
        if tang.min() > 0:
            crit.minima.append(Well(u, v, 0.1, v, float(tang.min())))
    return crit


def find_critical_sets(profile: AngularProfile, resolution: int = 4096) -> CriticalSets:
    """Locate the local maxima S and minima L of Theta on {Theta > 0}."""
    if resolution < 64:
        raise DomainError("resolution must be at least 64")
    if _is_polar(profile):
        return _critical_2d(profile, resolution)
    return _critical_nd(profile, resolution)


# --------------------------------------------------------------------------
# attraction time


def attraction_time(profile: AngularProfile, initial, r: float, t_cap: float = T_CAP,
                    crit: CriticalSets | None = None) -> float:
    """Empirical sup over initial points of the first time dist(phi_t, S) <= r.

    ``initial`` holds angles (2D) or unit vectors; returns ``math.inf`` if some
    sample is not attracted before ``t_cap``.
    """
    if crit is None:
        crit = find_critical_sets(profile)
    if not crit.maxima:
        return math.inf
    polar = _is_polar(profile)
    samples = np.atleast_1d(np.asarray(initial, dtype=float)) if polar else np.atleast_2d(initial)
    worst = 0.0
    for s in samples:
        if polar:
            if crit.distance(np.array(s)) <= r:
                continue

            def rhs(t, y):
                return [float(profile.dg(np.array([y[0]]))[0])]

            def event(t, y):
                return float(crit.distance(np.array(y[0]))) - r

            y0 = [float(s)]
        else:
            if crit.distance(s[None, :])[0] <= r:
                continue
            f = _embedded_field(profile)

            def rhs(t, y):
                return f(y)

            def event(t, y):
                return float(crit.distance((y / np.linalg.norm(y))[None, :])[0]) - r

            y0 = np.asarray(s, dtype=float)
        event.terminal = True
        event.direction = -1
        sol = solve_ivp(rhs, (0.0, t_cap), y0, events=event, rtol=1e-9, atol=1e-12)
        if sol.t_events[0].size == 0:
            return math.inf
        worst = max(worst, float(sol.t_events[0][0]))
    return worst
