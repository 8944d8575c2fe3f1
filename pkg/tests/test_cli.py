import json
import subprocess
import sys

import numpy as np
import pytest

from epictrl.cli import main, value_grid
from epictrl.config import load_config, load_scenario
from epictrl.exceptions import ConfigError


def _ini(tmp_path, body, name="s.ini"):
    p = tmp_path / name
    p.write_text(body)
    return str(p)


BASE = """
[model]
kind = {kind}
{extra}
gamma = {gamma}

[state]
x0 = {x0}
y0 = {y0}

[control]
ybar = {ybar}
"""


def test_bundled_scenarios_parse():
    fig1 = load_scenario("fig1")
    assert fig1.gamma == 0.05 and fig1.ybar == 0.2 and fig1.s0 == (0.99, 0.01)
    pp = load_scenario("phase-portrait")
    assert pp.rate.p == (0.2, 0.1) and pp.orbits == 8
    cx = load_scenario("counterexample")
    assert cx.ybar_high == 0.154
    assert load_scenario("classical-sir").rate.p == (0.3,)
    with pytest.raises(ConfigError):
        load_scenario("nope")


def test_simulate_fig1(tmp_path):
    assert main(["simulate", "--scenario", "fig1", "--out", str(tmp_path)]) == 0
    s = json.loads((tmp_path / "summary.json").read_text())
    assert s["feasible"] and s["regime"] == "separatrix"
    assert s["cost"] == pytest.approx(14.0528377856, abs=1e-9)
    ctl = np.genfromtxt(tmp_path / "controlled.csv", delimiter=",", names=True, comments="#")
    free = np.genfromtxt(tmp_path / "uncontrolled.csv", delimiter=",", names=True, comments="#")
    assert ctl["y"].max() <= 0.2 + 1e-8 < free["y"].max()
    assert ctl["u"].max() > 0 and np.all(free["u"] == 0)


def test_simulate_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        assert main(["simulate", "--scenario", "classical-sir", "--out", str(d)]) == 0
    for f in ("controlled.csv", "uncontrolled.csv", "summary.json", "run.json"):
        assert (a / f).read_bytes() == (b / f).read_bytes()


def test_simulate_phase_portrait(tmp_path):
    assert main(["simulate", "--scenario", "phase-portrait", "--control", "zero",
                 "--out", str(tmp_path)]) == 0
    assert (tmp_path / "curves.csv").read_text().startswith("y,kappa,lambda")
    assert len(list(tmp_path.glob("orbit_*.csv"))) == 8
    geo = json.loads((tmp_path / "geometry.json").read_text())
    assert geo["yhat"] > 0


def test_simulate_y0_zero(tmp_path):
    cfg = _ini(tmp_path, BASE.format(kind="fig1_model", extra="", gamma=0.05, x0=0.9, y0=0.0, ybar=0.2))
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
    a = (tmp_path / "o" / "controlled.csv").read_text()
    b = (tmp_path / "o" / "uncontrolled.csv").read_text()
    assert a == b
    assert json.loads((tmp_path / "o" / "summary.json").read_text())["cost"] == 0.0


def test_simulate_open_loop_file(tmp_path):
    u = tmp_path / "u.csv"
    u.write_text("t_start,u\n0,0.25\n4,0\n")
    cfg = _ini(tmp_path, BASE.format(kind="constant", extra="b = 0.3", gamma=0.1, x0=0.99, y0=0.01, ybar=0.5))
    assert main(["simulate", "--config", cfg, "--control", f"file:{u}", "--out", str(tmp_path / "o")]) == 0
    assert json.loads((tmp_path / "o" / "summary.json").read_text())["cost"] == pytest.approx(1.0)


def test_exit_codes(tmp_path, capsys):
    bad = _ini(tmp_path, "[model]\nkind = fig1_model\n")
    assert main(["simulate", "--config", bad]) == 2
    bad = _ini(tmp_path, BASE.format(kind="weird", extra="", gamma=0.05, x0=0.9, y0=0.1, ybar=0.2), "w.ini")
    assert main(["simulate", "--config", bad]) == 2
    bad = _ini(tmp_path, BASE.format(kind="fig1_model", extra="", gamma=0.05, x0=0.95, y0=0.1, ybar=0.2), "o.ini")
    assert main(["simulate", "--config", bad]) == 2  # outside the simplex
    inf = _ini(tmp_path, BASE.format(kind="fig1_model", extra="", gamma=0.05, x0=0.6, y0=0.3, ybar=0.2), "i.ini")
    assert main(["simulate", "--config", inf, "--out", str(tmp_path / "o")]) == 3
    triv = _ini(tmp_path, BASE.format(kind="fig1_model", extra="", gamma=0.05, x0=0.9, y0=0.1, ybar=0.6), "t.ini")
    assert main(["value-map", "--config", triv, "--resolution", "10"]) == 3
    assert main(["value-map", "--scenario", "counterexample", "--resolution", "10"]) == 3
    assert main(["simulate", "--scenario", "fig1", "--control", "bogus", "--out", str(tmp_path / "b")]) == 2
    with pytest.raises(SystemExit) as e:
        main(["simulate", "--scenario", "nope"])
    assert e.value.code == 2


def test_verify_trivial_vacuous(tmp_path, capsys):
    triv = _ini(tmp_path, BASE.format(kind="fig1_model", extra="", gamma=0.05, x0=0.9, y0=0.1, ybar=0.6))
    assert main(["verify", "--config", triv]) == 0
    assert "trivial" in capsys.readouterr().out


def test_verify_counterexample(capsys):
    assert main(["verify", "--scenario", "counterexample"]) == 0
    assert "ordering_violated=true" in capsys.readouterr().out


def test_verify_classical_sir(tmp_path, capsys):
    rep = tmp_path / "r.json"
    assert main(["verify", "--scenario", "classical-sir", "--alts", "20", "--report", str(rep)]) == 0
    out = capsys.readouterr().out
    assert "FAIL" not in out and "verdict: pass" in out
    assert json.loads(rep.read_text())["verdict"] is True


def test_verify_failure_exit(tmp_path, capsys):
    # an impossible tolerance makes the optimality verdict fail
    assert main(["verify", "--scenario", "classical-sir", "--alts", "5", "--tol-opt=-1e6"]) == 1


def test_value_map(tmp_path):
    out = tmp_path / "vm.csv"
    assert main(["value-map", "--scenario", "fig1", "--resolution", "40", "--out", str(out)]) == 0
    rows = np.genfromtxt(out, delimiter=",", names=True, dtype=None, encoding=None)
    assert set(rows["region"]) == {"DMinus", "DPlus"}
    assert np.all(rows["V"][rows["region"] == "DMinus"] == 0)
    assert np.all(rows["y"] <= 0.2 + 1e-12) and np.all(rows["x"] + rows["y"] <= 1 + 1e-12)
    # V non-decreasing in x along grid rows inside DPlus
    for y in np.unique(rows["y"]):
        sel = (rows["y"] == y) & (rows["region"] == "DPlus")
        v = rows["V"][sel][np.argsort(rows["x"][sel])]
        assert np.all(np.diff(v) >= -1e-9)


def test_value_map_cells_next_to_separatrix():
    """At resolution 500 the cells right of the separatrix are DPlus with V rising in x."""
    cfg = load_scenario("fig1")
    from epictrl import build_geometry, value_function
    g = build_geometry(cfg.model, cfg.ybar)
    n = 500
    for j in range(5, 100, 7):
        y = j / n
        i = int(np.floor(float(g.lam(y)) * n)) + 1
        if (i / n) - float(g.lam(y)) <= 1e-9:
            i += 1
        v = [value_function(g, ((i + k) / n, y)) for k in range(3)]
        assert all(q.region == "DPlus" and np.isfinite(q.value) and q.value > 0 for q in v)
        assert v[0].value < v[1].value < v[2].value
        left = value_function(g, ((i - 1) / n, y))
        assert left.region == "DMinus" and left.value == 0


def test_module_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "epictrl", "simulate", "--scenario", "classical-sir",
                        "--control", "ftb", "--out", str(tmp_path)], capture_output=True, text=True)
    assert r.returncode == 0, r.stderr
    assert (tmp_path / "summary.json").exists()


def test_load_config_integrator_overrides(tmp_path):
    body = BASE.format(kind="fig1_model", extra="", gamma=0.05, x0=0.9, y0=0.1, ybar=0.2)
    cfg = load_config(_ini(tmp_path, body + "\n[integrator]\nstep = 0.002\n"))
    assert cfg.integrator.step == 0.002
    with pytest.raises(ConfigError):
        load_config(_ini(tmp_path, body + "\n[integrator]\nfoo = 1\n", "x.ini"))
