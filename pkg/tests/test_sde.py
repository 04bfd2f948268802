import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pointyescape import (ConfigError, EmptyRange, NumericalBlowup, SimConfig, compare_angle_flow,
                          detect_failed_exit, grad_V, simulate_path)
from pointyescape.sde import exit_angle, kappa_radius, path_normals, write_stops_json


def ref_em(model, x0, normals, eps, dt):
    """Plain numpy Euler-Maruyama, independent of the compiled kernel."""
    x = np.array(x0, float)
    out = [x.copy()]
    for z in normals:
        x = x + grad_V(model, x) * dt + eps * math.sqrt(dt) * z
        out.append(x.copy())
    return np.array(out)


def test_config_defaults_and_validation():
    c = SimConfig(epsilon=0.01)
    assert c.step == pytest.approx(1e-4)
    assert c.n_steps == 15000
    assert SimConfig(epsilon=0.01, t_max=0.3, dt=0.1).n_steps == 3
    for bad in (dict(epsilon=-1), dict(epsilon=0.0), dict(epsilon=0.1, dt=0), dict(epsilon=0.1, t_max=0),
                dict(epsilon=0.1, a=-1), dict(epsilon=0.1, block_T=0), dict(epsilon=0.1, record_stride=0)):
        with pytest.raises(ConfigError):
            SimConfig(**bad)
    assert c.with_(seed=3).seed == 3


def test_kernel_matches_reference_loop(sec7):
    cfg = SimConfig(epsilon=0.02, t_max=0.05, seed=5, x0=(0.01, 0.003))
    rec, _ = simulate_path(sec7, cfg)
    ref = ref_em(sec7, cfg.x0, path_normals(cfg, 2), cfg.epsilon, cfg.step)
    np.testing.assert_allclose(rec.X, ref, rtol=1e-12, atol=1e-15)
    np.testing.assert_allclose(rec.times, cfg.step * np.arange(cfg.n_steps + 1), rtol=1e-12)


def test_kernel_matches_reference_loop_general_d():
    from pointyescape import PotentialModel, make_profile
    m = PotentialModel(make_profile("spherical-d", dim=3, quad=np.diag([0.1, 0.2, -0.1])), alpha=0.3)
    cfg = SimConfig(epsilon=0.05, t_max=0.02, seed=1, x0=(0.02, 0.01, -0.01))
    rec, _ = simulate_path(m, cfg)
    ref = ref_em(m, cfg.x0, path_normals(cfg, 3), cfg.epsilon, cfg.step)
    np.testing.assert_allclose(rec.X, ref, rtol=1e-10, atol=1e-14)


def test_interpreted_profile_matches_compiled(sec7):
    from pointyescape import PotentialModel
    from pointyescape.potential import CallableProfile
    from conftest import sec7_g
    slow = PotentialModel(CallableProfile(sec7_g, support=(-math.pi / 2, math.pi / 2), boundary_exponent=1.0),
                          alpha=0.5)
    cfg = SimConfig(epsilon=0.05, t_max=0.01, seed=2, x0=(0.02, 0.01))
    a, _ = simulate_path(sec7, cfg)
    b, _ = simulate_path(slow, cfg)
    np.testing.assert_allclose(a.X, b.X, atol=1e-9)


def test_determinism_and_stream_independence(sec7):
    cfg = SimConfig(epsilon=0.01, t_max=0.3, seed=11, path_index=4)
    a, sa = simulate_path(sec7, cfg)
    b, sb = simulate_path(sec7, cfg)
    assert np.array_equal(a.X, b.X) and sa == sb
    c, _ = simulate_path(sec7, cfg.with_(path_index=5))
    assert not np.array_equal(a.X, c.X)
    # the stream is Philox keyed by (seed, path index)
    gen = np.random.Generator(np.random.Philox(np.random.SeedSequence([11, 4])))
    assert np.array_equal(path_normals(cfg, 2), gen.standard_normal((cfg.n_steps, 2)))


def test_zero_noise_potential_is_monotone(sec7):
    cfg = SimConfig(epsilon=0.0, dt=1e-4, t_max=1.0, x0=(0.01 * math.cos(0.3), 0.01 * math.sin(0.3)))
    rec, _ = simulate_path(sec7, cfg)
    assert np.all(np.diff(rec.V) >= 0)
    assert rec.V[-1] > rec.V[0]


def test_sigma_is_trapezoid_of_r_power(sec7):
    cfg = SimConfig(epsilon=0.01, t_max=0.2, seed=3)
    rec, _ = simulate_path(sec7, cfg)
    f = np.maximum(rec.R, 1e-12) ** (sec7.alpha - 1)
    want = np.concatenate([[0.0], np.cumsum(0.5 * cfg.step * (f[1:] + f[:-1]))])
    np.testing.assert_allclose(rec.Sigma, want, rtol=1e-12)


def _first(mask, t):
    i = np.nonzero(mask)[0]
    return None if i.size == 0 else float(t[i[0]])


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_stopping_times_are_first_hits(sec7, seed):
    eps = 0.01
    cfg = SimConfig(epsilon=eps, t_max=1.0, seed=seed, rho_exit=0.1, delta=0.05)
    rec, s = simulate_path(sec7, cfg)
    t, V, R, g = rec.times, rec.V, rec.R, rec.g
    assert s.tau_v0 == _first(V >= cfg.v0 * eps ** 2, t)
    assert s.nu_v0 == s.tau_v0  # no perturbation
    assert s.kappa == _first(R >= kappa_radius(eps, 0.5, 1.0), t)
    assert s.Xi_one == _first(V >= 1.0, t)
    assert s.rho_delta == _first(R >= 0.05, t)
    assert s.exit == _first(R >= 0.1, t)
    pos = np.nonzero(g > 0)[0]
    assert s.gamma == (None if pos.size == 0 else _first((g <= 0) & (np.arange(t.size) > pos[0]), t))
    if s.tau_v0 is not None:
        k = int(round(s.tau_v0 / cfg.step))
        assert s.g_at_tau == g[k] and s.V_at_tau == V[k]
        after = np.arange(t.size) >= k
        assert s.zeta == _first(after & (g >= 2 * cfg.a), t)
        assert s.xi_half == _first((np.arange(t.size) > k) & (V <= 0.5 * V[k]), t)
    if s.zeta is not None:
        kz = int(round(s.zeta / cfg.step))
        assert s.varrho == _first((np.arange(t.size) > kz) & (g <= cfg.a), t)
        blocks = np.array(s.sigma_blocks)
        assert blocks[0] == s.zeta
        ks = np.round(blocks / cfg.step).astype(int)
        assert np.all(np.diff(rec.Sigma[ks]) >= cfg.block_T)
    if s.exit is not None:
        ke = int(round(s.exit / cfg.step))
        np.testing.assert_array_equal(s.x_at_exit, rec.X[ke])
        assert exit_angle(s) == pytest.approx(math.atan2(rec.X[ke, 1], rec.X[ke, 0]))


def test_stride_keeps_special_samples(sec7):
    cfg = SimConfig(epsilon=0.01, t_max=1.0, seed=7, record_stride=37)
    full, s = simulate_path(sec7, cfg.with_(record_stride=1))
    rec, s2 = simulate_path(sec7, cfg)
    assert s == s2
    assert rec.times[-1] == pytest.approx(full.times[-1])
    for t in (s.tau_v0, s.zeta):
        if t is not None:
            assert np.any(np.isclose(rec.times, t, rtol=0, atol=1e-12))


def test_stop_at_exit_truncates(sec7):
    cfg = SimConfig(epsilon=0.01, t_max=2.0, seed=1, stop_at_exit=True)
    rec, s = simulate_path(sec7, cfg)
    assert s.exit is not None
    assert rec.times[-1] == pytest.approx(s.exit)
    assert rec.R[-1] >= cfg.rho_exit and np.all(rec.R[:-1] < cfg.rho_exit)
    assert not detect_failed_exit(rec, cfg)
    assert detect_failed_exit(rec, cfg.with_(rho_exit=10.0))


def test_well_exit_time(sec7):
    cfg = SimConfig(epsilon=0.0, dt=1e-3, t_max=3.0, x0=(0.1 * math.cos(0.05), 0.1 * math.sin(0.05)),
                    well_center=(1.0, 0.0), well_radius=0.1)
    rec, s = simulate_path(sec7, cfg)
    assert s.e_w is not None
    k = int(round(s.e_w / cfg.step))
    chord = lambda j: np.linalg.norm(rec.X[j] / rec.R[j] - np.array([1.0, 0.0]))
    assert chord(k) >= 0.1 and chord(k - 1) < 0.1


def test_errors(sec7):
    cfg = SimConfig(epsilon=0.01, t_max=0.01)
    with pytest.raises(ConfigError):
        simulate_path(sec7, cfg, normals=np.zeros((3, 2)))
    with pytest.raises(ConfigError):
        simulate_path(sec7, cfg.with_(x0=(1.0, 2.0, 3.0)))
    with pytest.raises(NumericalBlowup):
        simulate_path(sec7, SimConfig(epsilon=0.0, dt=1.0, t_max=50.0, x0=(9.99e5, 0.0)))


def test_theta_carry_over_at_origin(sec7):
    rec, _ = simulate_path(sec7, SimConfig(epsilon=0.01, t_max=0.01))
    th = rec.theta
    assert np.all(np.isnan(th[0]))
    np.testing.assert_allclose(np.linalg.norm(th[1:], axis=1), 1.0)


def test_record_csv_and_json(tmp_path, sec7):
    cfg = SimConfig(epsilon=0.01, t_max=0.01, record_stride=10)
    rec, s = simulate_path(sec7, cfg)
    rec.to_csv(tmp_path / "p.csv")
    lines = (tmp_path / "p.csv").read_text().splitlines()
    assert lines[0] == "t,x1,x2,R,V,g,theta,Sigma"
    assert len(lines) == rec.times.size + 1
    write_stops_json(s, cfg, tmp_path / "s.json")
    data = json.loads((tmp_path / "s.json").read_text())
    assert data["config"]["epsilon"] == 0.01 and "tau_v0" in data["stopping_times"]


def test_step_halving_coupling(sec7):
    eps, T = 0.01, 0.2
    fine = SimConfig(epsilon=eps, dt=eps / 200, t_max=T)
    coarse = SimConfig(epsilon=eps, dt=eps / 100, t_max=T)
    dist = []
    for i in range(20):
        n = path_normals(fine.with_(path_index=i), 2)
        a, _ = simulate_path(sec7, fine.with_(path_index=i), normals=n)
        b, _ = simulate_path(sec7, coarse.with_(path_index=i), normals=(n[0::2] + n[1::2]) / math.sqrt(2))
        dist.append(np.max(np.linalg.norm(a.X[::2] - b.X, axis=1)))
    assert np.median(dist) < 1e-2


def test_angle_follows_flow_without_noise(sec7):
    cfg = SimConfig(epsilon=0.0, dt=1e-4, t_max=1.0, x0=(0.01 * math.cos(0.1), 0.01 * math.sin(0.1)))
    rec, _ = simulate_path(sec7, cfg)
    blocks = compare_angle_flow(rec, sec7.profile, 0.0, T=1.0)
    assert blocks and blocks[-1].t_end == pytest.approx(1.0)
    assert max(b.sup_deviation for b in blocks) < 1e-3
    assert all(abs(b.sigma_span - 1.0) < 1e-2 for b in blocks if not b.partial)
    # truncation at R >= delta
    cut = compare_angle_flow(rec, sec7.profile, 0.0, T=1.0, delta=0.05)
    assert rec.R[np.searchsorted(rec.times, cut[-1].t_end)] >= 0.05
    with pytest.raises(EmptyRange):
        compare_angle_flow(rec, sec7.profile, 5.0)
    rec0, _ = simulate_path(sec7, cfg.with_(x0=(-0.01, 0.0)))
    with pytest.raises(EmptyRange):
        compare_angle_flow(rec0, sec7.profile, 0.0)
