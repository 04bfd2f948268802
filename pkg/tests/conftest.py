import math
import warnings

import numpy as np
import pytest

from pointyescape import PotentialModel, SimConfig, make_profile, run_ensemble

LADDER = [0.01, 0.005, 0.002, 0.001]
ACCEPTANCE_LINES = []


def sec7_g(theta):
    """The sec7 profile written exactly as its defining formula (independent of the package)."""
    theta = np.asarray(theta, dtype=float)
    inside = np.abs(theta) < math.pi / 2
    t = np.where(inside, theta, 0.0)
    val = 2.0 / (1.5 + np.tan(t) ** 2) - 2.0 * np.cos(t) ** 4 + np.cos(t) ** 2
    return np.where(inside, val, 0.0)


@pytest.fixture(scope="session")
def sec7():
    return PotentialModel(make_profile("sec7"), alpha=0.5)


@pytest.fixture(scope="session")
def radial():
    return PotentialModel(make_profile("radial"), alpha=0.5)


@pytest.fixture(scope="session")
def ladder_stats(sec7):
    """The shared sec7 ensemble: the ladder, 200 paths per rung, 8 workers."""
    import time
    t0 = time.perf_counter()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        stats = run_ensemble(sec7, SimConfig(epsilon=LADDER[0], t_max=2.0, seed=2024), LADDER, 200, workers=8)
    stats.elapsed = time.perf_counter() - t0
    return stats


def report_criterion(number, ok, detail):
    line = f"ACCEPTANCE {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
