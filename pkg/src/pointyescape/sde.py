"""Euler-Maruyama paths of dX = grad V(X) dt + eps dB with online stopping times.

Each path owns a counter-based random stream (Philox keyed by the seed and
the path index), so a path is a pure function of ``(model, config)``.
The step loop is compiled with numba for the builtin profiles; profiles
without a compiled core run the same loop interpreted.
"""
from __future__ import annotations

import csv
import json
import math
import weakref
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from numba import njit

from .errors import ConfigError, EmptyRange, NumericalBlowup
from .potential import AngularProfile, PotentialModel, Profile2D
from .sphereflow import angle_trajectory, integrate_flow

R_FLOOR = 1e-12
BLOWUP_RADIUS = 1e6
MAX_BLOCKS = 4096

# order of hit indices returned by the kernel
HIT_NAMES = ("tau_v0", "nu_v0", "kappa", "gamma", "zeta", "varrho", "xi_half", "Xi_one",
             "rho_delta", "exit", "e_w")
TAU, NU, KAPPA, GAMMA, ZETA, VARRHO, XI, XI1, RHO, EXIT, EW = range(len(HIT_NAMES))


@dataclass(frozen=True)
class SimConfig:
    """Simulation parameters for one path.

    ``dt`` defaults to ``epsilon / 100``.  ``a`` is the g-level behind
    zeta (first g >= 2a at or after tau_v0) and varrho (first g <= a after
    zeta); ``delta`` and
    ``rho_exit`` are independent radii.  A well for ``e_w`` is the ball of
    chord radius ``well_radius`` around the unit vector ``well_center``.
    """

    epsilon: float
    dt: float | None = None
    t_max: float = 1.5
    seed: int = 0
    path_index: int = 0
    x0: tuple | None = None
    record_stride: int = 1
    v0: float = 10.0
    a: float = 0.05
    delta: float = 0.3
    rho_exit: float = 0.3
    perturbation_eta: float = 0.0
    block_T: float = 1.0
    well_center: tuple | None = None
    well_radius: float = 0.0
    stop_at_exit: bool = False

    def __post_init__(self):
        if self.epsilon < 0:
            raise ConfigError("epsilon must be non-negative")
        if self.epsilon == 0 and self.dt is None:
            raise ConfigError("dt must be given explicitly when epsilon = 0")
        if self.dt is not None and self.dt <= 0:
            raise ConfigError("dt must be positive")
        if self.t_max <= 0:
            raise ConfigError("t_max must be positive")
        if self.record_stride < 1:
            raise ConfigError("record_stride must be >= 1")
        for name in ("v0", "a", "delta", "rho_exit", "perturbation_eta", "well_radius"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        if self.block_T <= 0:
            raise ConfigError("block_T must be positive")

    @property
    def step(self) -> float:
        return self.dt if self.dt is not None else self.epsilon / 100.0

    @property
    def n_steps(self) -> int:
        return int(math.ceil(self.t_max / self.step - 1e-9))

    def with_(self, **changes) -> "SimConfig":
        return replace(self, **changes)


@dataclass
class StoppingTimes:
    """First-hitting times of one path (``None`` when not hit)."""

    tau_v0: float | None = None
    nu_v0: float | None = None
    kappa: float | None = None
    gamma: float | None = None
    zeta: float | None = None
    varrho: float | None = None
    xi_half: float | None = None
    Xi_one: float | None = None
    rho_delta: float | None = None
    exit: float | None = None
    e_w: float | None = None
    sigma_blocks: list = field(default_factory=list)
    g_at_tau: float | None = None
    V_at_tau: float | None = None
    x_at_tau: list | None = None
    x_at_exit: list | None = None

    def to_dict(self):
        return asdict(self)


@dataclass
class PathRecord:
    """Stored samples of one path (every ``stride``-th step plus the last)."""

    times: np.ndarray
    X: np.ndarray
    R: np.ndarray
    V: np.ndarray
    g: np.ndarray
    Sigma: np.ndarray
    alpha: float
    dt: float
    stride: int
    stops: StoppingTimes | None = None
    rho_exit: float | None = None

    @property
    def dim(self):
        return self.X.shape[1]

    @property
    def theta(self):
        """Unit direction X/R; carried over where R < 1e-12, NaN before the first valid one."""
        out = np.full_like(self.X, np.nan)
        ok = self.R >= R_FLOOR
        out[ok] = self.X[ok] / self.R[ok, None]
        idx = np.where(ok, np.arange(self.R.size), -1)
        idx = np.maximum.accumulate(idx)
        valid = idx >= 0
        out[valid] = out[idx[valid]]
        return out

    @property
    def angle(self):
        th = self.theta
        return np.arctan2(th[:, 1], th[:, 0])

    def to_csv(self, path):
        d = self.dim
        polar = d == 2
        th = self.angle if polar else self.theta
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            head = ["t"] + [f"x{i + 1}" for i in range(d)] + ["R", "V", "g"]
            head += ["theta"] if polar else [f"u{i + 1}" for i in range(d)]
            w.writerow(head + ["Sigma"])
            for k in range(self.times.size):
                row = [f"{self.times[k]:.10g}"] + [f"{v:.12g}" for v in self.X[k]]
                row += [f"{self.R[k]:.12g}", f"{self.V[k]:.12g}", f"{self.g[k]:.12g}"]
                row += [f"{th[k]:.12g}"] if polar else [f"{v:.12g}" for v in th[k]]
                w.writerow(row + [f"{self.Sigma[k]:.12g}"])


def path_rng(seed: int, path_index: int) -> np.random.Generator:
    """Counter-based generator for path ``path_index`` of experiment ``seed``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(path_index)])))


def path_normals(config: SimConfig, dim: int) -> np.ndarray:
    if config.epsilon == 0:
        return np.zeros((config.n_steps, dim))
    return path_rng(config.seed, config.path_index).standard_normal((config.n_steps, dim))


# --------------------------------------------------------------------------
# drift functions: (x, out) -> (V, g), writing grad V into out


def _polar_drift(gcore, hcore, alpha, beta):
    has_h = hcore is not None
    hc = hcore if has_h else gcore

    def drift(x, out):
        r = math.sqrt(x[0] * x[0] + x[1] * x[1])
        if r == 0.0:
            out[0] = 0.0
            out[1] = 0.0
            return 0.0, 0.0
        th = math.atan2(x[1], x[0])
        c = x[0] / r
        s = x[1] / r
        g, dg, _ = gcore(th)
        ra = r ** alpha
        fr = (1.0 + alpha) * g * ra
        ft = dg * ra
        V = g * ra * r
        if has_h:
            h, dh, _ = hc(th)
            rb = r ** beta
            fr += (1.0 + beta) * h * rb
            ft += dh * rb
            V += h * rb * r
        out[0] = fr * c - ft * s
        out[1] = fr * s + ft * c
        return V, g

    return drift


def _nd_drift(core, alpha):
    def drift(x, out):
        d = x.size
        r = 0.0
        for i in range(d):
            r += x[i] * x[i]
        r = math.sqrt(r)
        if r == 0.0:
            out[:] = 0.0
            return 0.0, 0.0
        u = x / r
        g = core(u, out)
        ug = 0.0
        for i in range(d):
            ug += u[i] * out[i]
        ra = r ** alpha
        for i in range(d):
            out[i] = ra * (out[i] - ug * u[i]) + (1.0 + alpha) * g * ra * u[i]
        return g * ra * r, g

    return drift


def _numpy_drift(model: PotentialModel):
    from .potential import grad_V, eval_V

    def drift(x, out):
        out[:] = grad_V(model, x)
        r = float(np.linalg.norm(x))
        g = 0.0 if r == 0 else float(model.profile.value(x / r))
        return float(eval_V(model, x)), g

    return drift


def _compiled(f):
    return hasattr(f, "py_func")


_DRIFTS: "weakref.WeakKeyDictionary[PotentialModel, tuple]" = weakref.WeakKeyDictionary()


def model_drift(model: PotentialModel):
    """Return ``(drift, compiled)`` for the model, building it once per model."""
    try:
        return _DRIFTS[model]
    except (KeyError, TypeError):
        pass
    prof = model.profile
    if model.is_polar:
        gcore = prof.core
        hcore = model.h.core if model.h is not None else None
        py = _polar_drift(gcore, hcore, model.alpha, model.beta)
        ok = _compiled(gcore) and (hcore is None or _compiled(hcore))
        entry = (njit(py), True) if ok else (py, False)
    elif prof.nd_core is not None:
        entry = (njit(_nd_drift(prof.nd_core, model.alpha)), True)
    else:
        entry = (_numpy_drift(model), False)
    try:
        _DRIFTS[model] = entry
    except TypeError:
        pass
    return entry


# --------------------------------------------------------------------------
# the step loop


@njit(nogil=True)
def _em_kernel(drift, x0, normals, noise, dt, n_steps, stride, alpha, thr, well_c, well_r,
               stop_at_exit):
    d = x0.size
    v0e2, eta, kR, a, delta, rho_exit, T = thr[0], thr[1], thr[2], thr[3], thr[4], thr[5], thr[6]
    n_rec = n_steps // stride + 4
    rec_k = np.empty(n_rec, np.int64)
    rec_X = np.empty((n_rec, d))
    rec_R = np.empty(n_rec)
    rec_V = np.empty(n_rec)
    rec_g = np.empty(n_rec)
    rec_S = np.empty(n_rec)
    hits = np.full(11, -1, np.int64)
    blocks = np.full(4096, -1, np.int64)
    nblocks = 0
    tau_state = np.zeros(d + 2)
    exit_state = np.zeros(d)

    x = x0.copy()
    grad = np.empty(d)
    V, g = drift(x, grad)
    R = 0.0
    for i in range(d):
        R += x[i] * x[i]
    R = math.sqrt(R)
    fR = max(R, 1e-12) ** (alpha - 1.0)
    Sig = 0.0
    V_tau = 0.0
    sig_mark = 0.0
    seen_pos = False
    entered = False
    status = 0
    m = 0
    for k in range(n_steps + 1):
        # stopping times at state k
        if hits[0] < 0:
            if V >= v0e2:
                hits[0] = k
                V_tau = V
                for i in range(d):
                    tau_state[i] = x[i]
                tau_state[d] = V
                tau_state[d + 1] = g
        elif hits[6] < 0 and V <= 0.5 * V_tau:
            hits[6] = k
        if hits[1] < 0 and V + eta * R ** (1.0 + alpha) >= v0e2:
            hits[1] = k
        if hits[2] < 0 and R >= kR:
            hits[2] = k
        if g > 0.0:
            seen_pos = True
        elif seen_pos and hits[3] < 0:
            hits[3] = k
        # zeta, varrho and the blocks are armed at tau, where the clock restarts
        if hits[4] < 0:
            if hits[0] >= 0 and g >= 2.0 * a:
                hits[4] = k
                sig_mark = Sig
                blocks[0] = k
                nblocks = 1
        else:
            if hits[5] < 0 and g <= a:
                hits[5] = k
            if Sig - sig_mark >= T and nblocks < blocks.size:
                blocks[nblocks] = k
                nblocks += 1
                sig_mark = Sig
        if hits[7] < 0 and V >= 1.0:
            hits[7] = k
        if hits[8] < 0 and R >= delta:
            hits[8] = k
        if hits[9] < 0 and R >= rho_exit:
            hits[9] = k
            for i in range(d):
                exit_state[i] = x[i]
        if well_r > 0.0 and R >= 1e-12 and hits[10] < 0:
            dist = 0.0
            for i in range(d):
                dist += (x[i] / R - well_c[i]) ** 2
            if math.sqrt(dist) < well_r:
                entered = True
            elif entered:
                hits[10] = k
        stop = stop_at_exit and hits[9] == k
        if k % stride == 0 or k == n_steps or stop or k == hits[0] or k == hits[4]:
            rec_k[m] = k
            for i in range(d):
                rec_X[m, i] = x[i]
            rec_R[m] = R
            rec_V[m] = V
            rec_g[m] = g
            rec_S[m] = Sig
            m += 1
        if stop or k == n_steps:
            break
        # Euler-Maruyama step
        Rn = 0.0
        for i in range(d):
            x[i] += grad[i] * dt + noise * normals[k, i]
            Rn += x[i] * x[i]
        Rn = math.sqrt(Rn)
        if not Rn <= 1e6:
            status = 1
            break
        V, g = drift(x, grad)
        fRn = max(Rn, 1e-12) ** (alpha - 1.0)
        Sig += 0.5 * dt * (fR + fRn)
        fR = fRn
        R = Rn
    return (rec_k[:m], rec_X[:m], rec_R[:m], rec_V[:m], rec_g[:m], rec_S[:m], hits,
            blocks[:nblocks], tau_state, exit_state, status)


def kappa_radius(epsilon: float, alpha: float, beta: float) -> float:
    return epsilon ** (2.0 / (1.0 + beta) + 0.5 * (beta - alpha))


def simulate_path(model: PotentialModel, config: SimConfig, normals=None):
    """Simulate one path; returns ``(PathRecord, StoppingTimes)``.

    ``normals`` overrides the path's own standard-normal increments (shape
    ``(n_steps, d)``), which is how coupled runs at different steps are built.
    """
    d = model.dim
    dt = config.step
    n = config.n_steps
    if normals is None:
        normals = path_normals(config, d)
    normals = np.ascontiguousarray(normals, dtype=float)
    if normals.shape != (n, d):
        raise ConfigError(f"normals must have shape {(n, d)}, got {normals.shape}")
    x0 = np.zeros(d) if config.x0 is None else np.asarray(config.x0, dtype=float)
    if x0.shape != (d,):
        raise ConfigError("x0 has the wrong dimension")
    eps = config.epsilon
    thr = np.array([config.v0 * eps * eps, config.perturbation_eta,
                    kappa_radius(eps, model.alpha, model.beta), config.a, config.delta,
                    config.rho_exit, config.block_T])
    if config.well_center is not None:
        wc = np.asarray(config.well_center, dtype=float)
        wc = wc / np.linalg.norm(wc)
    else:
        wc = np.zeros(d)
    wr = float(config.well_radius) if config.well_center is not None else 0.0
    drift, compiled = model_drift(model)
    kernel = _em_kernel if compiled else _em_kernel.py_func
    out = kernel(drift, x0, normals, eps * math.sqrt(dt), dt, n, config.record_stride,
                 model.alpha, thr, wc, wr, config.stop_at_exit)
    rec_k, X, R, V, g, S, hits, blocks, tau_state, exit_state, status = out
    if status:
        raise NumericalBlowup(f"|X| exceeded {BLOWUP_RADIUS:g} (seed={config.seed}, path={config.path_index})")
    stops = StoppingTimes(**{name: (None if hits[i] < 0 else float(hits[i] * dt))
                             for i, name in enumerate(HIT_NAMES)})
    stops.sigma_blocks = [float(b * dt) for b in blocks]
    if hits[TAU] >= 0:
        stops.x_at_tau = [float(v) for v in tau_state[:d]]
        stops.V_at_tau = float(tau_state[d])
        stops.g_at_tau = float(tau_state[d + 1])
    if hits[EXIT] >= 0:
        stops.x_at_exit = [float(v) for v in exit_state]
    record = PathRecord(times=rec_k * dt, X=X, R=R, V=V, g=g, Sigma=S, alpha=model.alpha, dt=dt,
                        stride=config.record_stride, stops=stops, rho_exit=config.rho_exit)
    return record, stops


def detect_failed_exit(path: PathRecord, config: SimConfig) -> bool:
    """True iff the path never reached radius ``rho_exit`` before ``t_max``."""
    # the online hit is exact per step; stored samples may skip the crossing
    if path.stops is not None and path.rho_exit == config.rho_exit:
        return path.stops.exit is None
    return not bool(np.any(path.R >= config.rho_exit))


def exit_angle(stops: StoppingTimes) -> float | None:
    if stops.x_at_exit is None:
        return None
    return math.atan2(stops.x_at_exit[1], stops.x_at_exit[0])


def write_stops_json(stops: StoppingTimes, config: SimConfig, path):
    with open(path, "w") as fh:
        json.dump({"config": asdict(config), "stopping_times": stops.to_dict()}, fh, indent=2, sort_keys=True)


# --------------------------------------------------------------------------
# angle versus time-changed flow


@dataclass
class BlockDeviation:
    t_start: float
    t_end: float
    sigma_span: float
    sup_deviation: float
    partial: bool


def _flow_at(profile: AngularProfile, u0, s, flow_dt):
    smax = float(np.max(s)) if s.size else 0.0
    n = max(1, int(math.ceil(smax / flow_dt)))
    if isinstance(profile, Profile2D) and profile.dim == 2:
        traj = angle_trajectory(profile, math.atan2(u0[1], u0[0]), smax / n if smax > 0 else 0.0, n)
        grid = np.linspace(0.0, smax, n + 1)
        ang = np.interp(s, grid, traj)
        return np.stack([np.cos(ang), np.sin(ang)], axis=1)
    fp = integrate_flow(profile, u0, smax, smax / n) if smax > 0 else None
    if fp is None:
        return np.repeat(u0[None, :], s.size, axis=0)
    pts = np.stack([np.interp(s, fp.times, fp.points[:, i]) for i in range(u0.size)], axis=1)
    return pts / np.linalg.norm(pts, axis=1, keepdims=True)


def compare_angle_flow(path: PathRecord, profile: AngularProfile, start: float, T: float = 1.0,
                       a: float | None = None, delta: float | None = None, t_end: float | None = None,
                       flow_dt: float = 1e-3) -> list:
    """Per-block sup of |theta_t - phi_(Sigma_{sigma_j, t})| from ``start`` on.

    Blocks start at sigma_j and end when Sigma has grown by ``T``; the range
    is truncated at the first sample after ``start`` with ``g <= a`` or
    ``R >= delta`` (when given) and at ``t_end``.  The last block may be
    partial.
    """
    idx = np.nonzero(path.times >= start)[0]
    if idx.size == 0:
        raise EmptyRange(f"no samples after t = {start}")
    k0 = int(idx[0])
    if not path.g[k0] > 0:
        raise EmptyRange(f"g <= 0 at the comparison start t = {path.times[k0]}")
    last = path.times.size - 1
    cut = np.zeros(path.times.size, dtype=bool)
    if a is not None:
        cut |= path.g <= a
    if delta is not None:
        cut |= path.R >= delta
    if t_end is not None:
        cut |= path.times > t_end
    cut[: k0 + 1] = False
    stops = np.nonzero(cut)[0]
    if stops.size:
        last = int(stops[0]) if t_end is None or path.times[stops[0]] <= t_end else int(stops[0]) - 1
    theta = path.theta
    out = []
    j0 = k0
    while j0 < last or (j0 == last and not out):
        span = path.Sigma[j0:last + 1] - path.Sigma[j0]
        over = np.nonzero(span >= T)[0]
        full = over.size > 0
        j1 = j0 + int(over[0]) if full else last
        sl = slice(j0, j1 + 1)
        s = path.Sigma[sl] - path.Sigma[j0]
        phi = _flow_at(profile, theta[j0], s, flow_dt)
        dev = float(np.max(np.linalg.norm(theta[sl] - phi, axis=1)))
        out.append(BlockDeviation(float(path.times[j0]), float(path.times[j1]), float(s[-1]), dev, not full))
        if j1 == j0:
            break
        j0 = j1
    return out
