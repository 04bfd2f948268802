import csv
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pointyescape import (DomainError, FitFailure, SimConfig, compute_psi, fit_escape_constant,
                          infinitesimal_time, run_ensemble, t_star)
from pointyescape.montecarlo import EscapeSeries, escape_bound, escape_satisfied, hitting_scale

C_STAR = 8 * 2 ** -0.25  # largest c with t >= ((1-psi) c t)^(1/(1-psi)) on [0, t_star], psi = 3/4


@pytest.fixture(scope="module")
def small(sec7):
    cfg = SimConfig(epsilon=0.01, t_max=1.5, seed=9)
    return run_ensemble(sec7, cfg, [0.01, 0.005], 24, workers=2, keep_records=2)


def test_psi_branches():
    assert compute_psi(0.5, 1.0) == pytest.approx(0.75)
    assert compute_psi(0.5, 0.25) == pytest.approx(2 / 3 + 0.1)
    # alpha = p takes the first branch; the formula jumps there
    assert compute_psi(0.4, 0.4) == pytest.approx(0.8 / 1.4 + 0.6 * 0.4 / 1.4)
    assert compute_psi(0.4, 0.4 + 1e-12) == pytest.approx(0.8 / 1.4)
    for a, p in ((0.0, 1.0), (1.0, 1.0), (0.5, 0.0), (0.5, -1.0)):
        with pytest.raises(DomainError):
            compute_psi(a, p)


@settings(max_examples=200, deadline=None)
@given(alpha=st.floats(0.01, 0.99), p=st.floats(0.01, 5.0))
def test_psi_in_unit_interval(alpha, p):
    assert 0 < compute_psi(alpha, p) < 1


def test_infinitesimal_time_values():
    assert infinitesimal_time(0.01, 0.5) == pytest.approx(math.log(100) * 0.01 ** (2 / 3))
    assert infinitesimal_time(0.01, 0.5) == pytest.approx(0.213753, abs=1e-6)
    assert hitting_scale(0.001, 0.5) == pytest.approx(0.01)
    with pytest.raises(DomainError):
        infinitesimal_time(1.0, 0.5)


@settings(max_examples=200, deadline=None)
@given(c=st.floats(0.6, 1e3), psi=st.floats(0.05, 0.95), t_eps=st.floats(0, 0.2))
def test_bound_is_one_half_at_t_star(c, psi, t_eps):
    ts = t_star(c, psi)
    if ts < 1.0:
        assert escape_bound(t_eps + ts, c, psi, t_eps) == pytest.approx(0.5, rel=1e-9)
    assert escape_bound(t_eps, c, psi, t_eps) == 0.0


def _linear_series(n=60, horizon=1.0, scale=1.0, n_t=10_001):
    t = np.linspace(0.0, horizon, n_t)
    return [EscapeSeries(t, scale * t, np.ones_like(t), horizon) for _ in range(n)]


def test_synthetic_fit_recovers_c_star():
    c = fit_escape_constant(_linear_series(), 0.75, 0.0)
    assert c == pytest.approx(C_STAR, rel=1e-3)


def test_fit_failures():
    with pytest.raises(FitFailure):
        fit_escape_constant(_linear_series(n=10), 0.75, 0.0)
    t = np.linspace(0, 1, 101)
    dead = [EscapeSeries(t, np.zeros_like(t), np.zeros_like(t), 1.0) for _ in range(60)]
    with pytest.raises(FitFailure):
        fit_escape_constant(dead, 0.75, 0.0)


def test_fit_ignores_vacuous_large_c_region():
    # every c above ~6.7 fails on a nonempty window until t_star < t_eps, where windows are empty
    c = fit_escape_constant(_linear_series(), 0.75, 0.01)
    assert c < 10


@settings(max_examples=8, deadline=None)
@given(lam=st.floats(1.0, 8.0))
def test_fit_monotone_in_potential(lam):
    base = fit_escape_constant(_linear_series(n=50, n_t=1001), 0.75, 0.0, rel_tol=1e-4)
    big = fit_escape_constant(_linear_series(n=50, scale=lam, n_t=1001), 0.75, 0.0, rel_tol=1e-4)
    assert big >= base * (1 - 1e-4)


def test_escape_satisfied_requires_positive_g():
    t = np.linspace(0, 1, 11)
    s = EscapeSeries(t, t, np.where(t > 0.35, 0.0, 1.0), 1.0)
    assert not escape_satisfied(s, 1.0, 0.75, 0.0)
    s = EscapeSeries(t, t, np.ones_like(t), 1.0)
    assert escape_satisfied(s, 1.0, 0.75, 0.0)


# -- ensembles ---------------------------------------------------------------


def test_counts_are_conserved(small):
    for e in small.per_eps:
        assert e.n_exited + e.n_failed_exit + e.n_anomalies == e.n_paths == 24
        assert sum(e.histogram) == e.n_exited
        assert len(e.histogram) == 12
        paths = small.paths[e.epsilon]
        assert [s.index for s in paths] == list(range(24))
        assert e.n_tau_hit == sum(s.tau is not None for s in paths)
        assert all(s.series is None for s in paths)


def test_ensemble_fields(small):
    e = small.eps(0.005)
    assert e.t_eps == pytest.approx(infinitesimal_time(0.005, 0.5))
    assert small.p == 1.0 and small.psi == pytest.approx(0.75)
    assert 0 <= e.p_g_positive <= 1 and 0 <= e.p_exit_direction <= 1
    assert small.eps(0.01).p_direction is None  # t_eps > window
    scaled = e.tau_scaled_quantiles["0.5"]
    assert scaled == pytest.approx(e.tau_quantiles["0.5"] / hitting_scale(0.005, 0.5))
    assert len(small.records[0.01]) == 2
    with pytest.raises(KeyError):
        small.eps(0.3)


def test_ensemble_matches_single_path(sec7, small):
    from pointyescape import simulate_path
    cfg = SimConfig(epsilon=0.005, t_max=1.5, seed=9, path_index=3)
    _, stops = simulate_path(sec7, cfg)
    s = small.paths[0.005][3]
    assert s.tau == stops.tau_v0 and s.exit_time == stops.exit


def test_json_and_tables(tmp_path, small):
    text = small.to_json(tmp_path / "e.json")
    assert text == small.to_json()
    data = json.loads((tmp_path / "e.json").read_text())
    assert set(data["t_eps_table"]) == {"0.01", "0.005"}
    assert "paths" not in data and "records" not in data
    small.write_tables(tmp_path)
    rows = list(csv.DictReader(open(tmp_path / "summary.csv")))
    assert [r["epsilon"] for r in rows] == ["0.01", "0.005"]
    rows = list(csv.DictReader(open(tmp_path / "paths_eps=0.005.csv")))
    assert len(rows) == 24


def test_worker_count_does_not_change_results(sec7, small):
    cfg = SimConfig(epsilon=0.01, t_max=1.5, seed=9)
    again = run_ensemble(sec7, cfg, [0.01, 0.005], 24, workers=5)
    assert again.to_json() == small.to_json()


def test_ensemble_rejects_empty(sec7):
    with pytest.raises(DomainError):
        run_ensemble(sec7, SimConfig(epsilon=0.01), [0.01], 0)
