"""Path ensembles over an epsilon ladder and the statistics built on them."""
from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .errors import DomainError, EmptyRange, FitFailure, NumericalBlowup
from .potential import PotentialModel
from .sde import SimConfig, compare_angle_flow, simulate_path
from .sphereflow import CriticalSets, find_critical_sets

C_LO, C_HI = 1e-6, 1e3
COVERAGE = 0.95
MIN_FIT_PATHS = 50
N_BINS = 12
QUANTILES = (0.1, 0.25, 0.5, 0.75, 0.9)
RECORD_DT = 5e-4


def compute_psi(alpha: float, p: float) -> float:
    """Growth exponent psi(alpha, p) in (0, 1) of the escape-rate bound."""
    if not 0 < alpha < 1:
        raise DomainError("alpha must lie in (0, 1)")
    if not p > 0:
        raise DomainError("p must be positive")
    if alpha >= p:
        psi = 2 * alpha / (1 + alpha) + (1 - alpha) * p / (p + 1)
    else:
        psi = (alpha + p) / (p + 1)
    assert 0 < psi < 1
    return psi


def infinitesimal_time(epsilon: float, alpha: float) -> float:
    """t_eps = |ln eps| * eps^(2(1-alpha)/(1+alpha))."""
    if not 0 < epsilon < 1:
        raise DomainError("epsilon must lie in (0, 1)")
    return abs(math.log(epsilon)) * epsilon ** (2 * (1 - alpha) / (1 + alpha))


def hitting_scale(epsilon: float, alpha: float) -> float:
    return epsilon ** (2 * (1 - alpha) / (1 + alpha))


def t_star(c: float, psi: float) -> float:
    """inf{t : ((1-psi) c t)^(1/(1-psi)) >= 1/2}, capped at 1."""
    return min(0.5 ** (1 - psi) / ((1 - psi) * c), 1.0)


def escape_bound(t, c, psi, t_eps):
    return ((1 - psi) * c * np.maximum(np.asarray(t) - t_eps, 0.0)) ** (1 / (1 - psi))


@dataclass
class EscapeSeries:
    """Samples of (t, V, g) of one path, enough to score the escape-rate bound."""

    t: np.ndarray
    V: np.ndarray
    g: np.ndarray
    horizon: float


def escape_satisfied(s: EscapeSeries, c: float, psi: float, t_eps: float) -> bool:
    end = min(t_star(c, psi), s.horizon)
    w = (s.t >= t_eps) & (s.t <= end)
    if not np.any(w):
        return True
    return bool(np.all(s.V[w] >= escape_bound(s.t[w], c, psi, t_eps)) and np.all(s.g[w] > 0))


def satisfied_fraction(series, c, psi, t_eps) -> float:
    return float(np.mean([escape_satisfied(s, c, psi, t_eps) for s in series]))


def fit_escape_constant(series, psi: float, t_eps: float, coverage: float = COVERAGE,
                        rel_tol: float = 1e-6) -> float:
    """Largest c in [1e-6, 1e3] up to which ``coverage`` of the paths satisfy the bound.

    Large c shrink the window [t_eps, t_star(c)] until it is vacuous, so the
    satisfied fraction is not monotone in c.  The fit takes the first failing
    c of an upward log scan and bisects (in log c) between it and the last
    passing one.
    """
    series = list(series)
    if len(series) < MIN_FIT_PATHS:
        raise FitFailure(f"need at least {MIN_FIT_PATHS} paths, got {len(series)}")

    def ok(c):
        return satisfied_fraction(series, c, psi, t_eps) >= coverage

    if not ok(C_LO):
        raise FitFailure(f"fewer than {coverage:.0%} of paths satisfy the bound at c = {C_LO:g}")
    grid = np.geomspace(C_LO, C_HI, 91)
    lo, hi = C_LO, None
    for c in grid[1:]:
        if ok(c):
            lo = c
        else:
            hi = c
            break
    if hi is None:
        return C_HI
    while hi / lo > 1 + rel_tol:
        mid = math.sqrt(lo * hi)
        if ok(mid):
            lo = mid
        else:
            hi = mid
    return lo


@dataclass
class PathSummary:
    index: int
    status: str  # exited, failed or anomaly
    exit_time: float | None = None
    exit_angle: float | None = None
    exit_dist: float | None = None
    tau: float | None = None
    g_tau: float | None = None
    direction_ok: bool | None = None
    deviations: list = field(default_factory=list)
    series: EscapeSeries | None = None
    escape_ok: bool | None = None


@dataclass
class EpsilonStats:
    epsilon: float
    n_paths: int
    n_exited: int
    n_failed_exit: int
    n_anomalies: int
    t_eps: float
    histogram: list
    p_direction: float | None
    p_exit_direction: float | None
    p_escape_rate: float | None
    p_escape_rate_all: float | None
    p_g_positive: float | None
    n_tau_hit: int
    tau_quantiles: dict
    tau_scaled_quantiles: dict
    median_deviation: float | None
    n_blocks: int


@dataclass
class EnsembleStats:
    alpha: float
    p: float | None
    psi: float | None
    c_fit: float | None
    t_star: float | None
    r: float
    window: float
    mu: float
    seed: int
    per_eps: list
    maxima: list
    fit_error: str | None = None
    fit_ceiling: float | None = None
    paths: dict = field(default_factory=dict, repr=False, compare=False)
    records: dict = field(default_factory=dict, repr=False, compare=False)

    def to_dict(self):
        d = {f.name: getattr(self, f.name) for f in fields(self) if f.name not in ("paths", "records")}
        d["per_eps"] = [asdict(e) for e in self.per_eps]
        d["t_eps_table"] = {f"{e.epsilon:g}": e.t_eps for e in self.per_eps}
        return d

    def to_json(self, path=None):
        text = json.dumps(_clean(self.to_dict()), indent=2, sort_keys=True)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text

    def eps(self, epsilon):
        for e in self.per_eps:
            if math.isclose(e.epsilon, epsilon):
                return e
        raise KeyError(epsilon)

    def write_tables(self, out_dir):
        """``summary.csv`` (one row per epsilon) and ``paths_eps=<eps>.csv`` per epsilon."""
        import os
        with open(os.path.join(out_dir, "summary.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            cols = ["epsilon", "n_paths", "n_exited", "n_failed_exit", "n_anomalies", "t_eps",
                    "p_direction", "p_exit_direction", "p_escape_rate", "p_g_positive",
                    "median_tau", "median_tau_scaled", "median_deviation"]
            w.writerow(cols)
            for e in self.per_eps:
                row = asdict(e)
                row["median_tau"] = e.tau_quantiles.get("0.5")
                row["median_tau_scaled"] = e.tau_scaled_quantiles.get("0.5")
                w.writerow([_fmt(row[c]) for c in cols])
        for eps, paths in self.paths.items():
            with open(os.path.join(out_dir, f"paths_eps={eps:g}.csv"), "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["path", "status", "exit_time", "exit_angle", "tau", "g_tau",
                            "direction_ok", "escape_ok", "max_deviation"])
                for s in paths:
                    w.writerow([s.index, s.status, _fmt(s.exit_time), _fmt(s.exit_angle), _fmt(s.tau),
                                _fmt(s.g_tau), _fmt(s.direction_ok), _fmt(s.escape_ok),
                                _fmt(max(s.deviations) if s.deviations else None)])


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, bool):
        return int(v)
    if isinstance(v, float):
        return repr(v)
    return v


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    return obj


def _dist_to_S(crit: CriticalSets, rec):
    if crit.dim == 2:
        return crit.distance(rec.angle)
    return crit.distance(rec.theta)


def _run_one(model, cfg: SimConfig, crit, r, window, t_eps, keep_until):
    idx = cfg.path_index
    try:
        rec, st = simulate_path(model, cfg)
    except NumericalBlowup:
        return PathSummary(idx, "anomaly"), None
    s = PathSummary(idx, "exited" if st.exit is not None else "failed")
    s.tau, s.g_tau = st.tau_v0, st.g_at_tau
    if st.exit is not None:
        s.exit_time = st.exit
        x = np.asarray(st.x_at_exit)
        if model.dim == 2:
            s.exit_angle = math.atan2(x[1], x[0])
            s.exit_dist = float(crit.distance(np.array([s.exit_angle]))[0]) if crit.maxima else None
        else:
            s.exit_dist = float(crit.distance((x / np.linalg.norm(x))[None, :])[0]) if crit.maxima else None
        if crit.maxima and t_eps < window:
            w = (rec.times >= t_eps) & (rec.times <= window)
            s.direction_ok = bool(np.all(rec.R[w] > 0) and np.all(_dist_to_S(crit, rec)[w] <= r))
    if st.zeta is not None:
        try:
            blocks = compare_angle_flow(rec, model.profile, st.zeta, cfg.block_T, a=cfg.a, delta=cfg.delta)
            s.deviations = [b.sup_deviation for b in blocks]
        except EmptyRange:
            pass
    keep = rec.times <= keep_until
    s.series = EscapeSeries(rec.times[keep].copy(), rec.V[keep].copy(), rec.g[keep].copy(),
                            float(rec.times[-1]))
    return s, rec


def _frac(flags):
    flags = [f for f in flags if f is not None]
    return float(np.mean(flags)) if flags else None


def _quantiles(values):
    if not values:
        return {}
    q = np.quantile(np.asarray(values, dtype=float), QUANTILES)
    return {f"{k:g}": float(v) for k, v in zip(QUANTILES, q)}


def run_ensemble(model: PotentialModel, base: SimConfig, epsilons, n_paths: int, workers: int = 1,
                 r: float = 0.08 * math.pi, window: float = 0.2, mu: float = 0.05,
                 p: float | None = None, crit: CriticalSets | None = None, keep_records: int = 0,
                 record_dt: float = RECORD_DT, log=None) -> EnsembleStats:
    """Simulate ``n_paths`` paths per epsilon and aggregate the limit-theorem statistics.

    ``base`` supplies everything except ``epsilon`` and ``path_index``;
    when ``base.dt`` is None the step is ``epsilon / 100`` and samples are
    stored about every ``record_dt`` time units.  The escape constant is fitted on the
    exited paths of the smallest epsilon and then scored on every rung.
    Per-path summaries land in ``stats.paths[eps]``; the PathRecords of the
    first ``keep_records`` paths per epsilon in ``stats.records[eps]``.
    """
    if n_paths < 1:
        raise DomainError("n_paths must be >= 1")
    epsilons = [float(e) for e in epsilons]
    if crit is None:
        crit = find_critical_sets(model.profile)
    if p is None:
        p = model.profile.boundary_exponent
    psi = compute_psi(model.alpha, p) if p is not None else None
    per_paths = {}
    records = {}
    for eps in epsilons:
        dt = base.dt if base.dt is not None else eps / 100
        stride = base.record_stride if base.dt is not None else max(1, round(record_dt / dt))
        t_eps = infinitesimal_time(eps, model.alpha)
        cfgs = [base.with_(epsilon=eps, path_index=i, record_stride=stride) for i in range(n_paths)]

        def work(chunk):
            return [_run_one(model, c, crit, r, window, t_eps, 1.0) for c in chunk]

        n_chunks = max(1, min(workers, n_paths))
        chunks = [cfgs[i::n_chunks] for i in range(n_chunks)]
        if workers <= 1:
            results = work(cfgs)
        else:
            with ThreadPoolExecutor(max_workers=workers) as ex:
                results = [x for part in ex.map(work, chunks) for x in part]
        results.sort(key=lambda x: x[0].index)
        per_paths[eps] = [x[0] for x in results]
        records[eps] = [x[1] for x in results[:keep_records]]
        if log:
            n_ex = sum(x[0].status == "exited" for x in results)
            log(f"eps={eps:g} paths={n_paths} exited={n_ex}")

    c_fit = None
    fit_error = None
    fit_ceiling = None
    if psi is not None:
        eps_min = min(epsilons)
        ok_paths = [s.series for s in per_paths[eps_min] if s.status == "exited"]
        t_min = infinitesimal_time(eps_min, model.alpha)
        # best coverage any c can reach: the bound is weakest at the bottom of the range
        fit_ceiling = satisfied_fraction(ok_paths, C_LO, psi, t_min) if ok_paths else None
        try:
            c_fit = fit_escape_constant(ok_paths, psi, t_min)
        except FitFailure as exc:
            fit_error = str(exc)

    per_eps = []
    edges = np.linspace(-math.pi, math.pi, N_BINS + 1)
    for eps in epsilons:
        paths = per_paths[eps]
        t_eps = infinitesimal_time(eps, model.alpha)
        exited = [s for s in paths if s.status == "exited"]
        if c_fit is not None:
            for s in paths:
                if s.status != "anomaly":
                    s.escape_ok = escape_satisfied(s.series, c_fit, psi, t_eps)
        if model.dim == 2:
            hist = np.histogram([s.exit_angle for s in exited], bins=edges)[0].tolist()
        else:
            hist = []
        taus = [s.tau for s in paths if s.tau is not None]
        devs = [d for s in paths for d in s.deviations]
        per_eps.append(EpsilonStats(
            epsilon=eps, n_paths=n_paths, n_exited=len(exited),
            n_failed_exit=sum(s.status == "failed" for s in paths),
            n_anomalies=sum(s.status == "anomaly" for s in paths), t_eps=t_eps, histogram=hist,
            p_direction=_frac([s.direction_ok for s in exited]),
            p_exit_direction=_frac([None if s.exit_dist is None else s.exit_dist <= r for s in exited]),
            p_escape_rate=_frac([s.escape_ok for s in exited]) if c_fit is not None else None,
            p_escape_rate_all=_frac([s.escape_ok for s in paths]) if c_fit is not None else None,
            # a tau not reached by t_max counts as g <= mu
            p_g_positive=_frac([s.g_tau is not None and s.g_tau > mu for s in paths
                                if s.status != "anomaly"]),
            n_tau_hit=len(taus), tau_quantiles=_quantiles(taus),
            tau_scaled_quantiles=_quantiles([t / hitting_scale(eps, model.alpha) for t in taus]),
            median_deviation=float(np.median(devs)) if devs else None, n_blocks=len(devs)))
        for s in paths:
            s.series = None

    stats = EnsembleStats(alpha=model.alpha, p=p, psi=psi, c_fit=c_fit,
                          t_star=t_star(c_fit, psi) if c_fit is not None else None, r=r, window=window,
                          mu=mu, seed=base.seed, per_eps=per_eps,
                          maxima=[m.location if np.ndim(m.location) == 0 else list(m.location)
                                  for m in crit.maxima],
                          fit_error=fit_error, fit_ceiling=fit_ceiling)
    stats.paths = per_paths
    stats.records = records
    return stats
