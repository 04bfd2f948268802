"""Sampled checks of the structural assumptions on a potential.

Constants are existential in the theory; here they are estimated as
extremal sampled ratios with a 10% safety margin, so a pass certifies the
inequalities on the sampled range only.  A sampled ratio counts as bounded
when it does not grow toward the degenerate end of the sample (r -> 0 for
the radial bounds, L -> 0 for the boundary bounds).
"""
from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigError, DegenerateProfile, DimensionError, UncheckedWarning
from .potential import (PotentialModel, Profile2D, eval_V, grad_V, grad_sphere_theta, hess_sphere_theta,
                        hessian_V, laplacian_V)
from .sphereflow import _fibonacci_sphere, attraction_time, find_critical_sets

MARGIN = 0.1
LAP_TOL = 1e-9
A0_FLOOR = 1e-4
BAND = 0.05
PASS, FAIL, UNCHECKED = "pass", "fail", "unchecked"


@dataclass(frozen=True)
class Grid:
    """Radii log-spaced in [r_min, r_max] times a uniform set of directions."""

    r_min: float = 1e-4
    r_max: float = 1.0
    n_radii: int = 256
    n_angles: int = 1024

    def __post_init__(self):
        if not 0 < self.r_min < self.r_max:
            raise ConfigError("grid radii must satisfy 0 < r_min < r_max")
        if self.n_radii < 2 or self.n_angles < 8:
            raise ConfigError("grid needs at least 2 radii and 8 directions")

    def radii(self):
        return np.geomspace(self.r_min, self.r_max, self.n_radii)

    def directions(self, dim):
        if dim == 2:
            th = -math.pi + (np.arange(self.n_angles) + 0.5) * (2 * math.pi / self.n_angles)
            return np.stack([np.cos(th), np.sin(th)], axis=1)
        return _fibonacci_sphere(self.n_angles, dim)


@dataclass
class CheckResult:
    name: str
    verdict: str
    margin: float
    witness: dict
    detail: str = ""


@dataclass
class ValidationReport:
    model: dict
    grid: dict
    checks: list = field(default_factory=list)
    constants: dict = field(default_factory=dict)
    critical: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c.verdict != FAIL for c in self.checks)

    def failures(self):
        return [c for c in self.checks if c.verdict == FAIL]

    def check(self, name) -> CheckResult:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def merge(self, other: "ValidationReport") -> "ValidationReport":
        out = ValidationReport(self.model, self.grid, self.checks + other.checks,
                               {**self.constants, **other.constants}, self.critical or other.critical)
        return out

    def to_dict(self):
        return _clean({"passed": self.passed, **asdict(self)})

    def to_json(self, path=None):
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["check", "verdict", "margin", "x", "theta", "value", "bound", "detail"])
            for c in self.checks:
                wt = c.witness
                x = wt.get("x")
                w.writerow([c.name, c.verdict, repr(float(c.margin)),
                            "" if x is None else " ".join(repr(float(v)) for v in x),
                            _num(wt.get("theta")), _num(wt.get("value")), _num(wt.get("bound")), c.detail])


def _num(v):
    return "" if v is None else repr(float(v))


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else ("inf" if v > 0 else "-inf" if v < 0 else None)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


# --------------------------------------------------------------------------
# the sample


class _Sample:
    """All model evaluations on a grid, flattened to (n, ...) arrays."""

    def __init__(self, model: PotentialModel, grid: Grid):
        d = model.dim
        r = grid.radii()
        u = grid.directions(d)
        self.model = model
        self.r = np.repeat(r, u.shape[0])
        self.u = np.tile(u, (r.size, 1))
        self.x = self.r[:, None] * self.u
        self.ridx = np.repeat(np.arange(r.size), u.shape[0])
        self.g = np.asarray(model.profile.value(self.u), dtype=float)
        if not np.any(self.g > 0):
            raise ConfigError("the sampled directions miss the support of g")
        self.h = np.zeros_like(self.g) if model.h is None else model.h.value(self.u)
        self.V = eval_V(model, self.x)
        self.G = grad_V(model, self.x)
        self.gn = np.linalg.norm(self.G, axis=1)
        self.lap = laplacian_V(model, self.x)
        self.H = hessian_V(model, self.x)
        self.Hn = np.linalg.norm(self.H, ord=2, axis=(1, 2))
        self.L = np.asarray(model.profile.boundary_rate(self.u), dtype=float)
        self.theta = np.arctan2(self.u[:, 1], self.u[:, 0]) if d == 2 else None

    def witness(self, i, value=None, bound=None, **extra):
        w = {"x": self.x[i].tolist(), "r": float(self.r[i]), "g": float(self.g[i])}
        if self.theta is not None:
            w["theta"] = float(self.theta[i])
        if value is not None:
            w["value"] = float(value)
        if bound is not None:
            w["bound"] = float(bound)
        w.update(extra)
        return w


def _bounded(name, s: _Sample, ratio, mask, scale, low_end=True):
    """Upper-bound check: ``ratio`` must stay bounded as ``scale`` -> its low end.

    Returns the check and the largest sampled ratio (before margin).
    """
    idx = np.nonzero(mask)[0]
    if idx.size == 0:
        return CheckResult(name, PASS, math.inf, {"note": "no samples in the region"}, "vacuous"), 0.0
    vals = ratio[idx]
    if not np.all(np.isfinite(vals)):
        bad = idx[~np.isfinite(vals)][0]
        return CheckResult(name, FAIL, -math.inf, s.witness(bad, ratio[bad]), "non-finite ratio"), math.inf
    worst = idx[np.argmax(vals)]
    top = float(vals.max())
    sc = scale[idx]
    cut = np.quantile(sc, BAND)
    band = sc <= cut
    if band.all() or not band.any():
        return CheckResult(name, PASS, top * MARGIN, s.witness(worst, top, top * (1 + MARGIN))), top
    rest = float(vals[~band].max())
    near = float(vals[band].max())
    bound = (1 + MARGIN) * rest + 1e-300
    if near > bound:
        i = idx[band][np.argmax(vals[band])]
        return CheckResult(name, FAIL, bound - near, s.witness(i, near, bound),
                           "ratio grows toward the degenerate end"), top
    return CheckResult(name, PASS, bound - near, s.witness(worst, top, top * (1 + MARGIN))), top


def _bounded_below(name, s: _Sample, ratio, mask, scale):
    """Lower-bound check: ``ratio`` must stay away from 0, also as ``scale`` -> 0."""
    idx = np.nonzero(mask)[0]
    if idx.size == 0:
        return CheckResult(name, PASS, math.inf, {"note": "no samples in the region"}, "vacuous"), math.inf
    vals = ratio[idx]
    low = float(vals.min())
    worst = idx[np.argmin(vals)]
    if not low > 0:
        return CheckResult(name, FAIL, low, s.witness(worst, low, 0.0), "ratio reaches 0"), low
    sc = scale[idx]
    band = sc <= np.quantile(sc, BAND)
    if band.all() or not band.any():
        return CheckResult(name, PASS, low, s.witness(worst, low, low / (1 + MARGIN))), low
    rest = float(vals[~band].min())
    near = float(vals[band].min())
    bound = rest / (1 + MARGIN)
    if near < bound:
        i = idx[band][np.argmin(vals[band])]
        return CheckResult(name, FAIL, near - bound, s.witness(i, near, bound),
                           "ratio decays toward the degenerate end"), low
    return CheckResult(name, PASS, near - bound, s.witness(worst, low, low / (1 + MARGIN))), low


def estimate_p(s: _Sample) -> float | None:
    """Log-log slope of g against L near the boundary, minus one."""
    m = (s.g > 0) & (s.L > 0) & (s.ridx == 0)
    if m.sum() < 8:
        return None
    L, g = s.L[m], s.g[m]
    near = L <= np.quantile(L, 0.1)
    if near.sum() < 4 or np.ptp(np.log(L[near])) == 0:
        return None
    slope = np.polyfit(np.log(L[near]), np.log(g[near]), 1)[0]
    return float(slope - 1.0)


def _boundary_p(model, s):
    p = model.profile.boundary_exponent
    if p is not None:
        return float(p), False
    return estimate_p(s), True


def _a0_search(s: _Sample):
    """Largest a0 with Delta V >= -tol on {0 < g < a0}, or None below the floor."""
    a = s.model.alpha
    tol = -LAP_TOL * s.r ** (a - 1.0)
    bad = (s.g > 0) & (s.lap < tol)
    if not bad.any():
        return float(s.g.max()), None, tol
    i = np.nonzero(bad)[0][np.argmin(s.g[bad])]
    a0 = float(s.g[i])
    return (a0 if a0 >= A0_FLOOR else None), i, tol


def _base_report(model, grid):
    return ValidationReport(model=model.metadata(), grid=asdict(grid))


def check_assumption_A(model: PotentialModel, grid: Grid | None = None, _sample=None) -> ValidationReport:
    grid = grid or Grid()
    s = _sample or _Sample(model, grid)
    rep = _base_report(model, grid)
    a, b = model.alpha, model.beta
    everywhere = np.ones(s.r.size, dtype=bool)
    C0_parts = {}

    # A1: g >= 0, g and h bounded, disjoint supports
    neg = s.g < 0
    i = int(np.argmin(s.g))
    bnd = float(max(np.abs(s.g).max(), np.abs(s.h).max()))
    overlap = (s.g != 0) & (s.h != 0)
    if neg.any():
        rep.checks.append(CheckResult("A1", FAIL, float(s.g[i]), s.witness(i, s.g[i], 0.0), "g takes negative values"))
    elif overlap.any():
        j = int(np.nonzero(overlap)[0][0])
        rep.checks.append(CheckResult("A1", FAIL, -float(abs(s.h[j])), s.witness(j, s.h[j], 0.0),
                                      "supports of g and h overlap"))
    elif not math.isfinite(bnd):
        rep.checks.append(CheckResult("A1", FAIL, -math.inf, s.witness(i), "g or h unbounded"))
    else:
        rep.checks.append(CheckResult("A1", PASS, float(s.g[i]), s.witness(i, s.g[i], 0.0)))
    C0_parts["g_h_bound"] = bnd

    # A2: the three growth bounds and the Laplacian sign near the boundary
    chk, C0_parts["grad"] = _bounded("A2.grad", s, s.gn / s.r ** a, everywhere, s.r)
    rep.checks.append(chk)
    radial = np.sum(s.G * s.u, axis=1)
    chk, C0_parts["radial"] = _bounded("A2.radial", s, np.maximum(-radial, 0.0) / s.r ** b, everywhere, s.r)
    rep.checks.append(chk)
    chk, C0_parts["hess"] = _bounded("A2.hess", s, s.Hn / s.r ** (a - 1.0), everywhere, s.r)
    rep.checks.append(chk)
    a0, bad, tol = _a0_search(s)
    if a0 is None:
        rep.checks.append(CheckResult("A2.laplacian", FAIL, float(s.lap[bad] - tol[bad]),
                                      s.witness(bad, s.lap[bad], tol[bad]),
                                      f"Delta V < 0 where g = {s.g[bad]:.3g} < {A0_FLOOR:g}"))
        a0_eff = A0_FLOOR
    else:
        m = (s.g > 0) & (s.g < a0)
        if m.any():
            j = np.nonzero(m)[0][np.argmin((s.lap - tol)[m])]
        else:
            j = int(np.argmax(s.g))
        rep.checks.append(CheckResult("A2.laplacian", PASS, float(s.lap[j] - tol[j]), s.witness(j, s.lap[j], tol[j])))
        a0_eff = a0
    rep.constants["a0"] = a0

    # A3: a cone where g >= c0, the beta bounds inside {g = 0}, and |grad V| >= c0 V / |x|
    gmax = float(s.g.max())
    top = int(np.argmax(s.g))
    axis = s.u[top]
    level = 0.5 * gmax
    ang = np.arccos(np.clip(s.u @ axis, -1.0, 1.0))
    low = (s.g < level) & (s.ridx == s.ridx[top])
    half = float(ang[low].min()) if low.any() else math.pi
    half = max(half, 0.0)
    if gmax > 0 and half > 0:
        rep.checks.append(CheckResult("A3.cone", PASS, half, s.witness(top, gmax, level),
                                      f"half-angle {half:.6g}"))
    else:
        rep.checks.append(CheckResult("A3.cone", FAIL, -1.0, s.witness(top, gmax, level), "no cone with g >= c0"))
    rep.constants["cone"] = {"axis": axis.tolist(), "half_angle": half, "level": level}
    zero = _interior_zero(s)
    chk, C0_parts["zero_grad"] = _bounded("A3.zero_grad", s, s.gn / s.r ** b, zero, s.r)
    rep.checks.append(chk)
    chk, C0_parts["zero_hess"] = _bounded("A3.zero_hess", s, s.Hn / s.r ** (b - 1.0), zero, s.r)
    rep.checks.append(chk)
    pos = (s.g > 0) & (s.V > 0)
    ratio = np.where(pos, s.gn * s.r / np.where(pos, s.V, 1.0), np.inf)
    chk, c_grad = _bounded_below("A3.grad_lower", s, ratio, pos, s.L)
    rep.checks.append(chk)
    rep.constants["c0_grad"] = c_grad / (1 + MARGIN) if math.isfinite(c_grad) else None

    # A4: boundary sandwich on {0 < g < a0}
    p, fitted = _boundary_p(model, s)
    rep.constants["p"] = p
    rep.constants["p_estimated"] = fitted
    region = (s.g > 0) & (s.g < a0_eff) & (s.L > 0)
    c0_parts = {"cone": level}
    if p is None:
        rep.checks.append(CheckResult("A4", UNCHECKED, 0.0, s.witness(top), "boundary exponent p unavailable"))
    else:
        Lp = np.where(s.L > 0, s.L, 1.0)
        rV = s.V / (Lp ** (p + 1) * s.r ** (1 + a))
        rG = s.gn / (Lp ** p * s.r ** a)
        for name, ratio in (("A4.V", rV), ("A4.grad", rG)):
            up, C0_parts[name] = _bounded(name + ".upper", s, ratio, region, s.L)
            lo, c0_parts[name] = _bounded_below(name + ".lower", s, ratio, region, s.L)
            rep.checks.extend([up, lo])
    rep.constants["C0"] = (1 + MARGIN) * max(C0_parts.values())
    rep.constants["c0"] = min(c0_parts.values()) / (1 + MARGIN)
    rep.constants["C0_parts"] = C0_parts
    rep.constants["c0_parts"] = c0_parts
    return rep


def _interior_zero(s: _Sample):
    """Samples in the interior of {g = 0}: g vanishes there and at both angular neighbours."""
    z = s.g == 0
    if s.theta is None:
        return z & (s.L == 0)
    n = int(np.sum(s.ridx == 0))
    zz = z.reshape(-1, n)
    inner = zz & np.roll(zz, 1, axis=1) & np.roll(zz, -1, axis=1)
    return inner.ravel()


def check_assumption_B(model: PotentialModel, grid: Grid | None = None, a0: float | None = None,
                       a: float = 0.05, r_attract: float = 0.05, _sample=None) -> ValidationReport:
    grid = grid or Grid()
    s = _sample or _Sample(model, grid)
    rep = _base_report(model, grid)
    prof = model.profile
    if a0 is None:
        a0 = _a0_search(s)[0] or A0_FLOOR

    # B1
    p, _ = _boundary_p(model, s)
    region = (s.g > 0) & (s.g < a0) & (s.L > 0)
    if p is None or p < 1:
        rep.checks.append(CheckResult("B1", UNCHECKED, 0.0, s.witness(int(np.argmax(s.g))),
                                      "requires a boundary exponent p >= 1"))
    else:
        Lp = np.where(s.L > 0, s.L, 1.0)
        chk, top = _bounded("B1", s, s.Hn / (Lp ** (p - 1) * s.r ** (model.alpha - 1.0)), region, s.L)
        rep.checks.append(chk)
        rep.constants["C0_B1"] = (1 + MARGIN) * top

    # B2: g = Theta + eta with |eta| / |x| bounded; the builtin split is exact
    eta = np.abs(model.eta(s.x)) / s.r
    tang = s.G - np.sum(s.G * s.u, axis=1, keepdims=True) * s.u
    gt = grad_sphere_theta(prof, s.u) * s.r[:, None] ** model.alpha
    if model.h is not None:
        gh = grad_sphere_theta(model.h, s.u) * s.r[:, None] ** model.beta
    else:
        gh = 0.0
    eta_p = np.linalg.norm(tang - gt - gh - model.eta_prime(s.x), axis=1) / s.r
    worst = int(np.argmax(np.maximum(eta, eta_p)))
    res = float(max(eta.max(), eta_p.max()))
    if math.isfinite(res) and res < 1e-6 * max(1.0, float(s.gn.max())):
        rep.checks.append(CheckResult("B2", PASS, -res, s.witness(worst, res, 0.0)))
    else:
        rep.checks.append(CheckResult("B2", FAIL, -res, s.witness(worst, res, 0.0), "residual of the split"))

    # B3 is reported, not certified
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateProfile)
        crit = find_critical_sets(prof)
    rep.critical = crit.to_dict()
    band = _level_band(prof, a)
    if crit.degenerate:
        detail = "degenerate: Theta constant"
        t0 = None
    elif band is None:
        detail = f"no directions with Theta in [{a:g}, {3 * a:g}]"
        t0 = None
    else:
        t0 = attraction_time(prof, band, r_attract, crit=crit)
        detail = f"empirical attraction time T0({r_attract:g}) = {t0:.6g} from Theta^-1([{a:g}, {3 * a:g}])"
    warnings.warn("B3 basins are only sampled, not certified", UncheckedWarning, stacklevel=2)
    rep.checks.append(CheckResult("B3", UNCHECKED, 0.0, {"n_start": 0 if band is None else len(band),
                                                          "T0": t0, "r": r_attract}, detail))

    # B4: uniform convexity and a Lojasiewicz-type bound on each well
    if crit.degenerate:
        rep.checks.append(CheckResult("B4", UNCHECKED, 0.0, {"note": "Theta constant"}, "degenerate: Theta constant"))
    elif not crit.minima:
        rep.checks.append(CheckResult("B4", PASS, math.inf, {"note": "no local minima"}, "vacuous"))
    for k, w in enumerate(crit.minima):
        rep.checks.extend(_check_well(prof, w, k))
    rep.constants["wells"] = [asdict(w) for w in crit.minima]
    return rep


def _level_band(prof, a, n=64):
    if isinstance(prof, Profile2D) and prof.dim == 2:
        th = np.linspace(-math.pi, math.pi, 8192, endpoint=False)
        g = prof.g(th)
        sel = th[(g >= a) & (g <= 3 * a)]
        if sel.size == 0:
            return None
        return sel[np.linspace(0, sel.size - 1, min(n, sel.size)).astype(int)]
    u = _fibonacci_sphere(4096, prof.dim)
    g = prof.value(u)
    sel = u[(g >= a) & (g <= 3 * a)]
    if sel.shape[0] == 0:
        return None
    return sel[np.linspace(0, sel.shape[0] - 1, min(n, sel.shape[0])).astype(int)]


def _tangent_basis(u):
    d = u.size
    q, _ = np.linalg.qr(np.column_stack([u, np.eye(d)]))
    return q[:, 1:d]


def _well_points(prof, w, n=65):
    if isinstance(prof, Profile2D) and prof.dim == 2:
        th = w.center + np.linspace(-1.0, 1.0, n) * w.radius
        return np.stack([np.cos(th), np.sin(th)], axis=1)
    c = np.asarray(w.center, dtype=float)
    B = _tangent_basis(c)
    dirs = _fibonacci_sphere(32, B.shape[1]) if B.shape[1] > 1 else np.array([[1.0], [-1.0]])
    pts = [c]
    for t in np.linspace(0.0, w.radius, 9)[1:]:
        for v in dirs:
            e = B @ v
            pts.append(math.cos(t) * c + math.sin(t) * e)
    return np.array(pts)


def _check_well(prof, w, k):
    pts = _well_points(prof, w)
    H = hess_sphere_theta(prof, pts)
    lam = np.empty(len(pts))
    for i, u in enumerate(pts):
        B = _tangent_basis(u)
        lam[i] = np.linalg.eigvalsh(B.T @ (0.5 * (H[i] + H[i].T)) @ B).min()
    i = int(np.argmin(lam))
    wit = {"x": pts[i].tolist(), "value": float(lam[i]), "bound": 0.0}
    out = [CheckResult(f"B4.convex[{k}]", PASS if lam[i] > 0 else FAIL, float(lam[i]), wit)]
    grad2 = np.sum(grad_sphere_theta(prof, pts) ** 2, axis=1)
    rise = prof.value(pts) - w.value
    m = rise > 1e-12
    if not m.any():
        out.append(CheckResult(f"B4.lojasiewicz[{k}]", PASS, math.inf, {"x": pts[0].tolist()}, "flat ball"))
        return out
    ratio = grad2[m] / rise[m]
    j = int(np.argmin(ratio))
    wit = {"x": pts[m][j].tolist(), "value": float(ratio[j]), "bound": 0.0}
    out.append(CheckResult(f"B4.lojasiewicz[{k}]", PASS if ratio[j] > 0 else FAIL, float(ratio[j]), wit,
                           f"c' = {ratio[j] / (1 + MARGIN):.6g}"))
    return out


def validate(model: PotentialModel, grid: Grid | None = None) -> ValidationReport:
    """Both assumption sets on one shared sample."""
    grid = grid or Grid()
    s = _Sample(model, grid)
    A = check_assumption_A(model, grid, _sample=s)
    B = check_assumption_B(model, grid, a0=A.constants.get("a0") or A0_FLOOR, _sample=s)
    return A.merge(B)


def boundary_laplacian_scan(model: PotentialModel, n_angles: int = 512) -> np.ndarray:
    """Rows (theta, (1+alpha)^2 g + g'') on a uniform grid over the closed support."""
    prof = model.profile
    if model.dim != 2 or not isinstance(prof, Profile2D):
        raise DimensionError("the boundary Laplacian scan needs a two-dimensional model")
    lo, hi = prof.support if prof.support is not None else (-math.pi, math.pi)
    th = np.linspace(lo, hi, n_angles)
    g, _, d2g = prof.derivs(th)
    return np.column_stack([th, (1.0 + model.alpha) ** 2 * g + d2g])


def write_scan_csv(scan, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["theta", "laplacian_g"])
        for t, v in scan:
            w.writerow([repr(float(t)), repr(float(v))])
