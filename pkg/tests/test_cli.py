import math
import subprocess
import sys

import numpy as np
import pytest

from chemcompass.cli import (
    EXIT_COMPUTE,
    EXIT_CONFIG,
    EXIT_OK,
    ResponsePoint,
    ResultTable,
    main,
    parallel_sweep,
    read_table,
    run,
    table_body,
)
from chemcompass.config import ExperimentConfig, config_from_header, loads_config
from chemcompass.model import RadicalPairModel

from conftest import OMEGA_46


def _write(tmp_path, text, name="cfg.toml"):
    p = tmp_path / name
    p.write_text(text)
    return p


def _fast(extra=""):
    return "[run]\ngrid = 19\n" + extra


def test_result_table_is_rectangular():
    with pytest.raises(ValueError):
        ResultTable("t", ("a", "b"), [(1.0, 2.0), (3.0,)])


def test_csv_round_trips_doubles(tmp_path):
    values = [0.1, 1 / 3, math.pi, 1e-300, -2.5e17]
    t = ResultTable("t", ("x",), [(v,) for v in values])
    t.to_csv(tmp_path / "t.csv")
    assert read_table(tmp_path / "t.csv").column("x").tolist() == values


def test_yield_default_config(tmp_path):
    cfg = loads_config(_fast()).with_overrides(out=str(tmp_path))
    paths = run(cfg, "yield")
    t = read_table(paths[0])
    res = t.column("phi_S_resolvent")
    assert res.max() - res.min() == pytest.approx(0.40, abs=0.03)
    assert t.column("abs_diff").max() < 1e-8


def test_yield_without_hyperfine_is_one(tmp_path):
    cfg = loads_config("[[model.nuclei]]\naxial = 0.0\n[run]\ngrid = 19\n").with_overrides(out=str(tmp_path))
    t = read_table(run(cfg, "yield")[0])
    assert np.all(t.column("phi_S_resolvent") == 1.0)


def test_header_reproduces_body(tmp_path):
    cfg = loads_config(_fast("[run.sweep]\nparameter = \"k\"\nvalues = [0.25, 0.5, 2.0]\n"))
    first = run(cfg.with_overrides(out=str(tmp_path / "a")), "sweep")[0]
    again = config_from_header(first)
    assert again.run.sweep == cfg.run.sweep
    second = run(again.with_overrides(out=str(tmp_path / "b")), "sweep")[0]
    assert table_body(first) == table_body(second)
    header = [ln for ln in open(first) if ln.startswith("#")]
    assert header[0].startswith("# chemcompass ")
    assert any(ln.startswith("# config_sha256: ") for ln in header)
    assert any(ln.startswith("# wall_time_s: ") for ln in header)


def test_sweep_one_point_equals_direct_call():
    m = RadicalPairModel.one_nucleus(46.0, 0.5, OMEGA_46 / 3)
    point = ResponsePoint(m, ("a_over_B",), 19, False)
    t = parallel_sweep([0.5], point, ("a_over_B", "D_S", "tmax", "tmin", "max", "min"))
    assert t.rows == [(0.5,) + tuple(point(0.5))]


def test_sweep_permutation_and_jobs():
    m = RadicalPairModel.one_nucleus(46.0, 0.5, OMEGA_46 / 3)
    point = ResponsePoint(m, ("a_over_B",), 19, False)
    cols = ("a_over_B", "D_S", "tmax", "tmin", "max", "min")
    pts = [0.1, 0.3, 1.0, 3.0]
    seq = parallel_sweep(pts, point, cols, jobs=1)
    par = parallel_sweep(pts, point, cols, jobs=2)
    assert seq.body() == par.body()
    rev = parallel_sweep(pts[::-1], point, cols, jobs=2)
    assert rev.rows == seq.rows[::-1]


def _explode(p):
    if p == 2.0:
        raise ValueError("bad point")
    return (p * 2,)


def test_sweep_records_failures():
    t = parallel_sweep([1.0, 2.0, 3.0], _explode, ("p", "v"), jobs=2)
    assert t.rows[0] == (1.0, 2.0) and t.rows[2] == (3.0, 6.0)
    assert t.rows[1][0] == 2.0 and math.isnan(t.rows[1][1])
    assert t.metadata["failed_points"] == 1
    assert "bad point" in t.metadata["error[0]"]


def test_fig3_gamma_zero_rows_coincide(tmp_path):
    cfg = loads_config(_fast("[run.fig3]\npoints = 3\ngamma_max = 1.0\ncurve_gammas = [0.0, 1.0]\n"))
    paths = run(cfg.with_overrides(out=str(tmp_path)), "dephasing-scan")
    t = read_table(paths[0])
    d_s = t.column("D_S")[t.column("gamma") == 0.0]
    assert len(d_s) == 4
    assert np.ptp(d_s) < 1e-9
    assert (tmp_path / "fig3_curves.csv").exists()


def test_optimize_hyperfine_writes_snippet(tmp_path):
    cfg = loads_config("[run.optimize]\ngrid = 19\n[run.optimize.optimizer]\nmax_evaluations = 60\n")
    paths = run(cfg.with_overrides(out=str(tmp_path)), "optimize")
    snippet = tmp_path / "optimize_best.toml"
    assert snippet in paths
    best = loads_config(snippet.read_text())
    a = best.model.nuclei[0].axial
    assert a == pytest.approx(OMEGA_46 / 3, rel=0.15)
    assert (tmp_path / "optimize_report.txt").exists()
    assert read_table(tmp_path / "optimize_trace.csv").rows


def test_optimize_control_zero_bound_reports_baseline(tmp_path):
    cfg = loads_config(_fast('[run.optimize]\ntarget = "control"\n[run.optimize.control]\nc_max_uT = 0.0\n'))
    run(cfg.with_overrides(out=str(tmp_path)), "optimize")
    header = open(tmp_path / "optimize.csv").read()
    base = float(header.split("# D_S_uncontrolled: ")[1].split()[0])
    ctrl = float(header.split("# D_S_controlled: ")[1].split()[0])
    assert base == ctrl


def test_main_exit_codes(tmp_path, capsys, monkeypatch):
    import chemcompass.cli as cli

    bad = _write(tmp_path, "[model]\nunknown = 1\n")
    assert main(["yield", "--config", str(bad)]) == EXIT_CONFIG
    assert "model.unknown" in capsys.readouterr().err
    ok = _write(tmp_path, _fast(), "ok.toml")
    assert main(["yield", "--config", str(ok), "--out", str(tmp_path / "y")]) == EXIT_OK

    def singular(cfg):
        raise np.linalg.LinAlgError("singular matrix")

    monkeypatch.setattr(cli, "cmd_yield", singular)
    assert main(["yield", "--config", str(ok), "--out", str(tmp_path / "y")]) == EXIT_COMPUTE
    assert "LinAlgError" in capsys.readouterr().err


def test_jobs_environment_is_echoed(tmp_path, monkeypatch):
    monkeypatch.setenv("CHEMCOMPASS_JOBS", "2")
    cfg = _write(tmp_path, _fast("[run.sweep]\nvalues = [0.3, 1.0]\n"))
    assert main(["sweep", "--config", str(cfg), "--out", str(tmp_path)]) == EXIT_OK
    text = open(tmp_path / "sweep.csv").read()
    assert "# jobs: 2 (environment CHEMCOMPASS_JOBS)" in text
    assert main(["sweep", "--config", str(cfg), "--out", str(tmp_path), "--jobs", "1"]) == EXIT_OK
    assert "# jobs: 1 (--jobs)" in open(tmp_path / "sweep.csv").read()
    monkeypatch.setenv("CHEMCOMPASS_JOBS", "many")
    assert main(["sweep", "--config", str(cfg), "--out", str(tmp_path)]) == EXIT_CONFIG


def test_console_script_entry_point(tmp_path):
    out = subprocess.run([sys.executable, "-m", "chemcompass.cli", "yield", "--grid", "9",
                          "--out", str(tmp_path)], capture_output=True, text=True)
    assert out.returncode == 0, out.stderr
    assert (tmp_path / "yield.csv").exists()


def test_fig3_scan_shapes(tmp_path):
    cfg = loads_config("[run]\ngrid = 31\n[run.fig3]\nd_values = [0.0, 1.0]\ncurve_gammas = [0.5]\n")
    t = read_table(run(cfg.with_overrides(out=str(tmp_path)), "fig3")[0])
    d, d_s = t.column("d"), t.column("D_S")
    correlated, uncorrelated = d_s[d == 1.0], d_s[d == 0.0]
    # correlated noise: no step of the scan loses more than 0.01
    assert np.all(np.diff(correlated) >= -0.01)
    # uncorrelated noise: degraded at gamma = 0.5, recovering afterwards
    i = int(np.argmin(uncorrelated))
    assert uncorrelated[2] < uncorrelated[0]
    assert uncorrelated[i + 1:].max() > uncorrelated[i]
