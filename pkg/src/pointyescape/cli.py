"""Command line front end: validate, flow, simulate, ensemble, report.

Exit codes: 0 success, 1 an assumption check failed, 2 unusable
configuration, 3 missing input files, 4 any other runtime failure.
Errors print one line ``error code=<n> kind=<type> message=<text>``.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import json
import logging
import math
import os
import sys
import warnings

import numpy as np

from .assumptions import Grid, boundary_laplacian_scan, validate, write_scan_csv
from .errors import ConfigError, DomainError, MissingInput, PointyError
from .montecarlo import run_ensemble
from .potential import (_LIST_KEYS, _SCALAR_KEYS, PotentialModel, parse_number, parse_number_list,
                        parse_profile_text, profile_from_mapping)
from .sde import SimConfig, simulate_path, write_stops_json
from .sphereflow import find_critical_sets, integrate_flow
from .svg import paths_figure, profile_figure

log = logging.getLogger("pointyescape")

PROFILE_KEYS = {"family"} | _LIST_KEYS | _SCALAR_KEYS
DEFAULTS = {
    "model": {"profile": "sec7", "profile_file": "", "alpha": "0.5", "beta": "",
              **{k: "" for k in sorted(PROFILE_KEYS)}},
    "simulation": {"epsilons": "0.01, 0.005, 0.002, 0.001", "dt": "auto", "t_max": "2.0", "seed": "0",
                   "n_paths": "200", "workers": "1", "x0": "", "record_dt": "5e-4"},
    "thresholds": {"v0": "10", "a": "0.05", "delta": "0.3", "rho_exit": "0.3", "r": "0.08*pi",
                   "window": "0.2", "mu": "0.05", "block_T": "1", "perturbation_eta": "0"},
    "output": {"dir": "results", "dump_paths": "false", "svg": "true", "panel_paths": "12"},
    "grid": {"r_min": "1e-4", "r_max": "1", "n_radii": "256", "n_angles": "1024"},
}
EXIT_OK, EXIT_ASSUMPTION, EXIT_CONFIG, EXIT_MISSING, EXIT_RUNTIME = 0, 1, 2, 3, 4


class Settings:
    """Validated view of an experiment config (INI sections of ``DEFAULTS``)."""

    def __init__(self, parser: configparser.ConfigParser, base_dir="."):
        self.cp = parser
        self.base_dir = base_dir

    def raw(self, section, key):
        return self.cp.get(section, key).strip()

    def num(self, section, key):
        return parse_number(self.raw(section, key))

    def int(self, section, key):
        v = self.num(section, key)
        if v != int(v):
            raise ConfigError(f"{section}.{key} must be an integer")
        return int(v)

    def flag(self, section, key):
        try:
            return self.cp.getboolean(section, key)
        except ValueError as exc:
            raise ConfigError(f"{section}.{key}: {exc}") from None

    def model(self) -> PotentialModel:
        path = self.raw("model", "profile_file")
        if path:
            path = os.path.join(self.base_dir, path)
            if not os.path.exists(path):
                raise MissingInput(f"profile file {path} not found")
            with open(path) as fh:
                profile = parse_profile_text(fh.read())
        else:
            entries = {k: self.raw("model", k) for k in PROFILE_KEYS if self.raw("model", k)}
            profile = profile_from_mapping({"name": self.raw("model", "profile"), **entries})
        beta = self.raw("model", "beta")
        return PotentialModel(profile, alpha=self.num("model", "alpha"), beta=parse_number(beta) if beta else None)

    def epsilons(self):
        eps = list(parse_number_list(self.raw("simulation", "epsilons")))
        if not eps:
            raise ConfigError("simulation.epsilons is empty")
        return eps

    def sim_config(self, epsilon, dim) -> SimConfig:
        dt = self.raw("simulation", "dt")
        x0 = self.raw("simulation", "x0")
        x0 = parse_number_list(x0) if x0 else None
        if x0 is not None and len(x0) != dim:
            raise ConfigError(f"simulation.x0 needs {dim} components")
        t = {k: self.num("thresholds", k) for k in ("v0", "a", "delta", "rho_exit", "block_T",
                                                     "perturbation_eta")}
        return SimConfig(epsilon=epsilon, dt=None if dt in ("", "auto") else parse_number(dt),
                         t_max=self.num("simulation", "t_max"), seed=self.int("simulation", "seed"),
                         x0=x0, **t)

    def grid(self) -> Grid:
        return Grid(r_min=self.num("grid", "r_min"), r_max=self.num("grid", "r_max"),
                    n_radii=self.int("grid", "n_radii"), n_angles=self.int("grid", "n_angles"))

    def out_dir(self):
        d = self.raw("output", "dir")
        os.makedirs(d, exist_ok=True)
        return d


def load_settings(path=None, overrides=()) -> Settings:
    """Read an INI config on top of the defaults; unknown sections or keys are errors."""
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    cp.read_dict(DEFAULTS)
    base = "."
    if path:
        if not os.path.exists(path):
            raise MissingInput(f"config file {path} not found")
        user = configparser.ConfigParser(interpolation=None)
        user.optionxform = str
        try:
            user.read(path)
        except configparser.Error as exc:
            raise ConfigError(" ".join(str(exc).split())) from None
        for sec in user.sections():
            if sec not in DEFAULTS:
                raise ConfigError(f"unknown section [{sec}]")
            for key, val in user.items(sec):
                if key not in DEFAULTS[sec]:
                    raise ConfigError(f"unknown key {sec}.{key}")
                cp.set(sec, key, val)
        base = os.path.dirname(os.path.abspath(path))
    for item in overrides:
        key, sep, val = item.partition("=")
        sec, dot, name = key.strip().partition(".")
        if not sep or not dot or sec not in DEFAULTS or name not in DEFAULTS[sec]:
            raise ConfigError(f"bad override {item!r}; expected section.key=value")
        cp.set(sec, name, val.strip())
    return Settings(cp, base)


# --------------------------------------------------------------------------
# shared outputs


def _write_profile_files(model, out):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        crit = find_critical_sets(model.profile)
    with open(os.path.join(out, "critical.json"), "w") as fh:
        json.dump(_jsonable(crit.to_dict()), fh, indent=2, sort_keys=True)
    if model.dim == 2:
        scan = boundary_laplacian_scan(model, 512)
        g = model.profile.g(scan[:, 0])
        with open(os.path.join(out, "profile.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["theta", "g", "laplacian_g"])
            for (t, lap), gv in zip(scan, g):
                w.writerow([repr(float(t)), repr(float(gv)), repr(float(lap))])
    return crit


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


# --------------------------------------------------------------------------
# commands


def cmd_validate(st: Settings, args) -> int:
    model = st.model()
    out = st.out_dir()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        rep = validate(model, st.grid())
    rep.to_json(os.path.join(out, "validation.json"))
    rep.to_csv(os.path.join(out, "validation.csv"))
    if model.dim == 2:
        write_scan_csv(boundary_laplacian_scan(model, 512), os.path.join(out, "laplacian_scan.csv"))
    _write_profile_files(model, out)
    for c in rep.failures():
        print(f"FAIL {c.name}: {c.detail} witness={json.dumps(_jsonable(c.witness), sort_keys=True)}")
    print(f"validate: {'pass' if rep.passed else 'fail'} ({len(rep.failures())} failed checks)")
    return EXIT_OK if rep.passed else EXIT_ASSUMPTION


def cmd_flow(st: Settings, args) -> int:
    model = st.model()
    out = st.out_dir()
    if args.u0:
        u0 = np.asarray(parse_number_list(args.u0))
    else:
        th = parse_number(args.theta0)
        if model.dim != 2:
            raise ConfigError("--theta0 needs a two-dimensional model; use --u0")
        u0 = np.array([math.cos(th), math.sin(th)])
    if u0.shape != (model.dim,):
        raise ConfigError(f"--u0 needs {model.dim} components")
    fp = integrate_flow(model.profile, u0 / np.linalg.norm(u0), float(parse_number(args.t_end)),
                        float(parse_number(args.dt)))
    fp.to_csv(os.path.join(out, "flow.csv"))
    _write_profile_files(model, out)
    end = fp.terminal
    where = f"theta/pi={math.atan2(end[1], end[0]) / math.pi:.6f}" if model.dim == 2 else f"u={end.tolist()}"
    print(f"flow: t={fp.times[-1]:g} {where} Theta={fp.theta_values[-1]:.6g}")
    return EXIT_OK


def cmd_simulate(st: Settings, args) -> int:
    model = st.model()
    out = st.out_dir()
    eps = parse_number(args.epsilon) if args.epsilon else st.epsilons()[0]
    cfg = st.sim_config(eps, model.dim).with_(path_index=args.path_index)
    dt = cfg.step
    stride = max(1, round(st.num("simulation", "record_dt") / dt))
    rec, stops = simulate_path(model, cfg.with_(record_stride=stride))
    stem = f"path_eps={eps:g}_i={args.path_index}"
    rec.to_csv(os.path.join(out, stem + ".csv"))
    write_stops_json(stops, cfg, os.path.join(out, stem + ".json"))
    print(f"simulate: eps={eps:g} path={args.path_index} tau={stops.tau_v0} exit={stops.exit}")
    return EXIT_OK


def _exit_truncated(rec):
    hit = np.nonzero(rec.R >= (rec.rho_exit or np.inf))[0]
    return rec.X[: hit[0] + 1] if hit.size else rec.X


def cmd_ensemble(st: Settings, args) -> int:
    model = st.model()
    out = st.out_dir()
    eps = st.epsilons()
    n = st.int("simulation", "n_paths")
    workers = st.int("simulation", "workers")
    dump = st.flag("output", "dump_paths")
    panel = st.int("output", "panel_paths")
    base = st.sim_config(eps[0], model.dim)
    crit = _write_profile_files(model, out)

    def progress(msg):
        print(msg, file=sys.stderr)

    stats = run_ensemble(model, base, eps, n, workers=workers, r=st.num("thresholds", "r"),
                         window=st.num("thresholds", "window"), mu=st.num("thresholds", "mu"), crit=crit,
                         keep_records=n if dump else min(panel, n),
                         record_dt=st.num("simulation", "record_dt"), log=progress)
    stats.to_json(os.path.join(out, "ensemble.json"))
    stats.write_tables(out)
    pdir = os.path.join(out, "panels")
    os.makedirs(pdir, exist_ok=True)
    for e, recs in stats.records.items():
        if dump:
            for i, rec in enumerate(recs):
                rec.to_csv(os.path.join(out, f"path_eps={e:g}_i={i}.csv"))
        if model.dim != 2:
            continue
        with open(os.path.join(pdir, f"eps={e:g}.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["path", "x1", "x2"])
            for i, rec in enumerate(recs[:panel]):
                for x in _exit_truncated(rec):
                    w.writerow([i, f"{x[0]:.6g}", f"{x[1]:.6g}"])
    with open(os.path.join(pdir, "meta.json"), "w") as fh:
        json.dump({"epsilons": eps, "rho_exit": base.rho_exit}, fh, indent=2)
    for e in stats.per_eps:
        print(f"eps={e.epsilon:g} exited={e.n_exited}/{e.n_paths} p_exit_direction={e.p_exit_direction} "
              f"p_g_positive={e.p_g_positive} median_deviation={e.median_deviation}")
    if st.flag("output", "svg") and model.dim == 2:
        _render(out)
    return EXIT_OK


def _read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def _render(out) -> list:
    written = []
    prof = os.path.join(out, "profile.csv")
    crit_path = os.path.join(out, "critical.json")
    maxima = []
    if os.path.exists(crit_path):
        with open(crit_path) as fh:
            crit = json.load(fh)
        maxima = [0.5 * (m["lo"] + m["hi"]) for m in crit.get("maxima", []) if not isinstance(m["lo"], list)]
    if os.path.exists(prof):
        _, rows = _read_csv(prof)
        a = np.array(rows, dtype=float)
        svg = profile_figure(a[:, 0] / 1.0, a[:, 1], a[:, 2], maxima)
        path = os.path.join(out, "figure1.svg")
        with open(path, "w") as fh:
            fh.write(svg)
        written.append(path)
    meta = os.path.join(out, "panels", "meta.json")
    if os.path.exists(meta):
        with open(meta) as fh:
            m = json.load(fh)
        panels = []
        for e in m["epsilons"]:
            f = os.path.join(out, "panels", f"eps={e:g}.csv")
            if not os.path.exists(f):
                continue
            _, rows = _read_csv(f)
            a = np.array(rows, dtype=float).reshape(-1, 3)
            paths = [a[a[:, 0] == i, 1:] for i in np.unique(a[:, 0])]
            panels.append((e, paths))
        if panels:
            path = os.path.join(out, "figure2.svg")
            with open(path, "w") as fh:
                fh.write(paths_figure(panels, maxima, m["rho_exit"]))
            written.append(path)
    return written


def cmd_report(st: Settings, args) -> int:
    out = args.input or st.raw("output", "dir")
    if not os.path.isdir(out):
        raise MissingInput(f"result directory {out} not found")
    written = _render(out)
    if not written:
        raise MissingInput(f"no profile.csv or panels/ in {out}")
    for w in written:
        print(f"report: wrote {w}")
    return EXIT_OK


# --------------------------------------------------------------------------


def _global_flags(suppress):
    p = argparse.ArgumentParser(add_help=False)
    d = argparse.SUPPRESS if suppress else None
    p.add_argument("--config", default=d, help="INI experiment config")
    p.add_argument("--out", default=d, help="output directory (output.dir)")
    p.add_argument("--seed", type=int, default=d, help="simulation.seed")
    p.add_argument("--workers", type=int, default=d, help="simulation.workers")
    p.add_argument("--set", action="append", default=argparse.SUPPRESS if suppress else [],
                   metavar="SECTION.KEY=VALUE", help="override any config key")
    p.add_argument("--verbose", action="store_true", default=d)
    return p


def build_parser():
    parser = argparse.ArgumentParser(prog="pointyescape", parents=[_global_flags(False)],
                                     description="Small-noise escape from a cusp-type singular point.")
    sub = parser.add_subparsers(dest="command", required=True)
    common = _global_flags(True)
    sub.add_parser("validate", parents=[common], help="check the structural assumptions")
    f = sub.add_parser("flow", parents=[common], help="integrate the angular gradient flow")
    f.add_argument("--theta0", default="0.1")
    f.add_argument("--u0", default="")
    f.add_argument("--t-end", default="50")
    f.add_argument("--dt", default="1e-3")
    s = sub.add_parser("simulate", parents=[common], help="simulate one path")
    s.add_argument("--epsilon", default="")
    s.add_argument("--path-index", type=int, default=0)
    sub.add_parser("ensemble", parents=[common], help="run the epsilon ladder")
    r = sub.add_parser("report", parents=[common], help="render SVG figures from result files")
    r.add_argument("--input", default="", help="result directory (default output.dir)")
    return parser


COMMANDS = {"validate": cmd_validate, "flow": cmd_flow, "simulate": cmd_simulate,
            "ensemble": cmd_ensemble, "report": cmd_report}


def _fail(code, exc):
    msg = " ".join(str(exc).split()) or type(exc).__name__
    print(f"error code={code} kind={type(exc).__name__} message={msg}", file=sys.stderr)
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    overrides = list(args.set or [])
    if args.out is not None:
        overrides.append(f"output.dir={args.out}")
    if args.seed is not None:
        overrides.append(f"simulation.seed={args.seed}")
    if args.workers is not None:
        overrides.append(f"simulation.workers={args.workers}")
    try:
        st = load_settings(args.config, overrides)
        return COMMANDS[args.command](st, args)
    except MissingInput as exc:
        return _fail(EXIT_MISSING, exc)
    except (ConfigError, DomainError, configparser.Error, SyntaxError) as exc:
        return _fail(EXIT_CONFIG, exc)
    except (PointyError, ValueError, OSError) as exc:
        return _fail(EXIT_RUNTIME, exc)


if __name__ == "__main__":
    sys.exit(main())
