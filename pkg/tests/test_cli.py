import csv
import json
import math
import subprocess
import sys

import pytest

from pointyescape.cli import load_settings, main

FAST_GRID = ["--set", "grid.n_radii=16", "--set", "grid.n_angles=512"]


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def ensemble_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("ens")
    code = main(["ensemble", "--out", str(out), "--set", "simulation.n_paths=6",
                 "--set", "simulation.epsilons=0.01, 0.005", "--workers", "2"])
    assert code == 0
    return out


def test_validate_sec7_passes(tmp_path, capsys):
    code, out, _ = run(capsys, "validate", "--out", str(tmp_path), *FAST_GRID)
    assert code == 0 and "validate: pass" in out
    for f in ("validation.json", "validation.csv", "laplacian_scan.csv", "profile.csv", "critical.json"):
        assert (tmp_path / f).exists()
    assert json.loads((tmp_path / "validation.json").read_text())["passed"] is True


def test_validate_wobble_fails_with_witness(tmp_path, capsys):
    cfg = tmp_path / "wobble.ini"
    cfg.write_text("[model]\nprofile = bump2d\nfamily = log-wobble\n\n[output]\ndir = %s\n" % (tmp_path / "o"))
    code, out, _ = run(capsys, "validate", "--config", str(cfg), *FAST_GRID)
    assert code == 1
    assert "FAIL A2.laplacian" in out and '"x": [' in out


def test_profile_file(tmp_path, capsys):
    (tmp_path / "bump.txt").write_text("name = bump2d\nfamily = powcos\npower = 3\n")
    cfg = tmp_path / "c.ini"
    cfg.write_text("[model]\nprofile_file = bump.txt\n")
    code, _, _ = run(capsys, "--config", str(cfg), "validate", "--out", str(tmp_path / "o"), *FAST_GRID)
    assert code == 0
    cfg.write_text("[model]\nprofile_file = missing.txt\n")
    code, _, err = run(capsys, "validate", "--config", str(cfg), "--out", str(tmp_path / "o"))
    assert code == 3 and "kind=MissingInput" in err


def test_flow_command(tmp_path, capsys):
    code, out, _ = run(capsys, "flow", "--out", str(tmp_path), "--theta0", "0.1", "--t-end", "20")
    assert code == 0
    assert "theta/pi=0.232103" in out and "Theta=0.807838" in out
    rows = list(csv.reader(open(tmp_path / "flow.csv")))
    assert rows[0] == ["t", "angle", "Theta"] and len(rows) == 20001 + 1


def test_flow_general_dimension(tmp_path, capsys):
    code, out, _ = run(capsys, "flow", "--out", str(tmp_path), "--set", "model.profile=spherical-d",
                       "--set", "model.dim=3", "--u0", "0.3, 0.8, 0.52", "--t-end", "20", "--dt", "1e-2")
    assert code == 0 and "u=[" in out
    code, _, err = run(capsys, "flow", "--out", str(tmp_path), "--set", "model.profile=spherical-d",
                       "--theta0", "0.1")
    assert code == 2


def test_simulate_command(tmp_path, capsys):
    code, out, _ = run(capsys, "simulate", "--out", str(tmp_path), "--epsilon", "0.01", "--path-index", "3",
                       "--seed", "5")
    assert code == 0 and "path=3" in out
    data = json.loads((tmp_path / "path_eps=0.01_i=3.json").read_text())
    assert data["config"]["seed"] == 5 and data["config"]["path_index"] == 3
    assert (tmp_path / "path_eps=0.01_i=3.csv").read_text().startswith("t,x1,x2,R,V,g,theta,Sigma")


def test_ensemble_outputs(ensemble_dir):
    for f in ("ensemble.json", "summary.csv", "paths_eps=0.01.csv", "paths_eps=0.005.csv",
              "panels/meta.json", "panels/eps=0.01.csv", "figure1.svg", "figure2.svg", "profile.csv"):
        assert (ensemble_dir / f).exists(), f
    data = json.loads((ensemble_dir / "ensemble.json").read_text())
    assert [e["epsilon"] for e in data["per_eps"]] == [0.01, 0.005]
    assert data["psi"] == 0.75


def test_report_is_byte_identical(ensemble_dir, tmp_path, capsys):
    before = {f: (ensemble_dir / f).read_bytes() for f in ("figure1.svg", "figure2.svg")}
    code, out, _ = run(capsys, "report", "--input", str(ensemble_dir))
    assert code == 0 and out.count("report: wrote") == 2
    for f, b in before.items():
        assert (ensemble_dir / f).read_bytes() == b
    code, _, _ = run(capsys, "report", "--input", str(ensemble_dir))
    assert all((ensemble_dir / f).read_bytes() == b for f, b in before.items())


@pytest.mark.parametrize("argv, code, kind", [
    (["report", "--input", "/nonexistent/dir"], 3, "MissingInput"),
    (["validate", "--config", "/nonexistent.ini"], 3, "MissingInput"),
    (["validate", "--set", "model.alpha=1.5"], 2, "ConfigError"),
    (["validate", "--set", "model.nope=1"], 2, "ConfigError"),
    (["validate", "--set", "model.profile=unknown"], 2, "ConfigError"),
    (["simulate", "--epsilon", "-0.1"], 2, "ConfigError"),
    (["flow", "--theta0", "__import__('os')"], 2, "ConfigError"),
])
def test_exit_codes(tmp_path, capsys, argv, code, kind):
    got, _, err = run(capsys, *argv, "--out", str(tmp_path))
    assert got == code
    assert err.startswith(f"error code={code} kind={kind} ")


def test_report_on_empty_dir(tmp_path, capsys):
    code, _, err = run(capsys, "report", "--input", str(tmp_path))
    assert code == 3 and "no profile.csv" in err


def test_config_file_checks(tmp_path):
    cfg = tmp_path / "c.ini"
    cfg.write_text("[bogus]\nx = 1\n")
    with pytest.raises(Exception, match="unknown section"):
        load_settings(str(cfg))
    cfg.write_text("[simulation]\nepsilons = 0.01, 0.002\nt_max = 1.5\n[thresholds]\nr = 0.1*pi\n")
    st = load_settings(str(cfg), ["simulation.seed=7"])
    assert st.epsilons() == [0.01, 0.002]
    assert st.num("thresholds", "r") == pytest.approx(0.1 * math.pi)
    sc = st.sim_config(0.01, 2)
    assert sc.seed == 7 and sc.t_max == 1.5 and sc.dt is None
    with pytest.raises(Exception, match="bad override"):
        load_settings(None, ["seed=3"])


def test_console_script_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "pointyescape.cli", "report", "--input", str(tmp_path)],
                         capture_output=True, text=True)
    assert res.returncode == 3
