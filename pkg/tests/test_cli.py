import csv
import json
import subprocess
import sys
from pathlib import Path

import pytest

from bhtwofold.cli import SweepSpec, UsageError, _parse_grid, _workers, main
from bhtwofold.errors import InvalidParameter
from bhtwofold.maps import read_map
from bhtwofold.model import load_quench_config

DATA = Path(__file__).parent / "data"

ANALYTIC = """[quench]
engine = analytic
u0 = inf
u1 = 200
nbar = 1
M = 2
T = 6
dt_sample = 0.04

[analytic]
R_max = 30
N_k = 1024
dispersion = effective

[analysis]
ridge_axis = R
predict = effective
"""

ED = """[quench]
engine = ed
u0 = inf
u1 = 24
nbar = 1
M = {M}
n_max = 2
T = {T}
dt_sample = 0.05

[ed]
max_dim = {max_dim}
"""


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_usage_errors_exit_2(tmp_path, capsys):
    with pytest.raises(SystemExit) as e:
        main(["dispersion", "--nbar", "1"])
    assert e.value.code == 2
    with pytest.raises(SystemExit) as e:
        main(["dispersion", "--kind", "phonon", "--nbar", "1", "--u", "3"])
    assert e.value.code == 2
    with pytest.raises(SystemExit) as e:
        main(["analyze", str(DATA / "two_velocity.csv"), "--window", "5"])
    assert e.value.code == 2
    with pytest.raises(SystemExit) as e:
        main(["quench-ed", "--config", str(tmp_path / "absent.ini"), "--outdir", str(tmp_path)])
    assert e.value.code == 2
    assert "cannot read" in capsys.readouterr().err


def test_dispersion_table(capsys):
    assert main(["dispersion", "--kind", "pair", "--nbar", "1", "--u-grid", "8,24"]) == 0
    rows = list(csv.DictReader(capsys.readouterr().out.splitlines()))
    assert [float(r["U_over_J"]) for r in rows] == [8.0, 24.0]
    assert float(rows[0]["V_CE_pred"]) == pytest.approx(5.8202, abs=2e-4)
    assert float(rows[0]["V_m_pred"]) == pytest.approx(6.9837, abs=2e-4)
    assert rows[0]["V_s2_strong"] == "nan"
    assert main(["dispersion", "--kind", "effective", "--nbar", "0.5", "--u", "50"]) == 0
    row = next(csv.DictReader(capsys.readouterr().out.splitlines()))
    assert float(row["V_s2_strong"]) == pytest.approx(4.0)


def test_analyze_fixture(tmp_path):
    out = tmp_path / "rep.json"
    assert main(["analyze", str(DATA / "two_velocity.csv"), "--ridge-axis", "R",
                 "--eta-scan", "0.05:0.3:0.05", "--out", str(out)]) == 0
    rep = json.loads(out.read_text())
    assert rep["V_CE"] == pytest.approx(4.0, rel=0.02)
    assert rep["V_m"] == pytest.approx(2.0, rel=0.02)
    assert rep["flags"] == []
    assert len(rep["eta_scan"]) == 6


def test_analyze_truncated_map_fails_with_line(tmp_path, capsys):
    lines = (DATA / "two_velocity.csv").read_text().splitlines()
    bad = tmp_path / "cut.csv"
    bad.write_text("\n".join(lines[:101] + [lines[101][:3]]) + "\n")
    assert main(["analyze", str(bad)]) == 1
    assert "line 102" in capsys.readouterr().err


def test_predict_map_and_plot_script(tmp_path):
    out = tmp_path / "g2.csv"
    assert main(["predict-map", "--u", "200", "--R-max", "10", "--t-max", "1", "--dt", "0.1",
                 "--N-k", "512", "--variant", "leading", "--out", str(out), "--plot-script"]) == 0
    m = read_map(out)
    assert m.shape == (11, 10)
    assert m.metadata["variant"] == "leading"
    script = tmp_path / "g2_plot.py"
    compile(script.read_text(), str(script), "exec")


def test_quench_ed_writes_manifest(tmp_path):
    cfg = write(tmp_path, "ed.ini", ED.format(M=6, T=0.5, max_dim=100000))
    outdir = tmp_path / "run"
    assert main(["quench-ed", "--config", str(cfg), "--outdir", str(outdir)]) == 0
    man = json.loads((outdir / "manifest.json").read_text())
    assert man["status"] == "complete"
    for name in man["files"]:
        assert (outdir / name).exists()
    assert man["diagnostics"]["number_drift"] < 1e-10
    assert read_map(outdir / "G2.csv").metadata["engine"] == "ed"


def test_outputs_are_deterministic(tmp_path):
    cfg = write(tmp_path, "ed.ini", ED.format(M=5, T=0.3, max_dim=100000))
    for d in ("a", "b"):
        assert main(["quench-ed", "--config", str(cfg), "--outdir", str(tmp_path / d)]) == 0
    for name in ("G1.csv", "G2.csv", "G1.json", "G2.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_capacity_refusal(tmp_path, capsys):
    cfg = write(tmp_path, "big.ini", ED.format(M=12, T=1, max_dim=1000))
    with pytest.raises(SystemExit) as e:
        main(["quench-ed", "--config", str(cfg), "--outdir", str(tmp_path / "o")])
    assert e.value.code == 2
    err = capsys.readouterr().err
    assert "exceeds the cap 1000" in err and "tebd" in err
    assert not (tmp_path / "o").exists()


def test_engine_mismatch_is_usage_error(tmp_path):
    cfg = write(tmp_path, "ed.ini", ED.format(M=4, T=0.1, max_dim=1000))
    with pytest.raises(SystemExit) as e:
        main(["quench-tebd", "--config", str(cfg), "--outdir", str(tmp_path / "o")])
    assert e.value.code == 2


def test_quench_tebd_convergence_flag(tmp_path, capsys):
    text = ED.format(M=4, T=0.3, max_dim=1).replace("engine = ed", "engine = tebd")
    text = text.replace("[ed]\nmax_dim = 1", "[tebd]\nchi = 16\ndt = 0.01")
    cfg = write(tmp_path, "tebd.ini", text)
    assert main(["quench-tebd", "--config", str(cfg), "--outdir", str(tmp_path / "o"),
                 "--convergence-check"]) == 0
    assert "convergence: PASS" in capsys.readouterr().out
    man = json.loads((tmp_path / "o" / "manifest.json").read_text())
    assert man["convergence"]["verdict"] == "PASS"


def test_sweep_isolates_failures(tmp_path, monkeypatch):
    cfg = write(tmp_path, "a.ini", ANALYTIC)
    monkeypatch.setenv("BHTWOFOLD_WORKERS", "2")
    # U/J = 0 has no gap: that point fails, the others complete
    assert main(["sweep", "--config", str(cfg), "--axis", "U_over_J", "--values", "0,24,200",
                 "--outdir", str(tmp_path / "sw")]) == 0
    rows = list(csv.DictReader((tmp_path / "sw" / "sweep.csv").open()))
    assert [float(r["U_over_J"]) for r in rows] == [0.0, 24.0, 200.0]
    assert "DomainError" in rows[0]["error"]
    for r in rows[1:]:
        assert r["error"] == ""
        assert float(r["V_CE"]) == pytest.approx(6.0, rel=0.05)
    man = json.loads((tmp_path / "sw" / "manifest.json").read_text())
    assert man["failed_points"] == [0.0]
    assert (tmp_path / "sw" / "point_002" / "report_G2.json").exists()


def test_sweep_all_failed_returns_1(tmp_path):
    cfg = write(tmp_path, "a.ini", ANALYTIC)
    assert main(["sweep", "--config", str(cfg), "--axis", "U_over_J", "--values", "0",
                 "--outdir", str(tmp_path / "sw"), "--workers", "1"]) == 1


def test_sweep_spec_guards(tmp_path):
    cfg = load_quench_config(write(tmp_path, "a.ini", ANALYTIC))
    with pytest.raises(UsageError):
        SweepSpec("U_over_J", (), cfg)
    with pytest.raises(UsageError):
        SweepSpec("U_over_J", (1, 3, 2), cfg)
    with pytest.raises(UsageError):
        SweepSpec("J", (1,), cfg)
    with pytest.raises(InvalidParameter, match="integer filling"):
        SweepSpec("nbar", (0.5, 1.0), cfg).point(0.5)
    finite = load_quench_config(write(tmp_path, "b.ini", ANALYTIC.replace("u0 = inf", "u0 = 50")))
    pt = SweepSpec("nbar", (0.5, 1.0), finite).point(0.5)
    assert pt.params.N == 1 and pt.protocol.nbar == 0.5


def test_grid_and_workers(monkeypatch):
    assert _parse_grid("0.05:0.3:0.05") == [0.05, 0.1, 0.15, 0.2, 0.25, 0.3]
    assert _parse_grid("8, 12") == [8.0, 12.0]
    with pytest.raises(UsageError):
        _parse_grid("1:2")
    monkeypatch.setenv("BHTWOFOLD_WORKERS", "3")
    assert _workers(10) == 3 and _workers(2) == 2
    monkeypatch.setenv("BHTWOFOLD_WORKERS", "x")
    with pytest.raises(UsageError):
        _workers(4)


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "bhtwofold", "--version"],
                       capture_output=True, text=True)
    assert r.returncode == 0 and r.stdout.strip()
