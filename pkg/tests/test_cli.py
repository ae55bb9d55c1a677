import os

import numpy as np
import pytest

from qmaxwell import cli
from qmaxwell.diagnostics import COLUMNS, EnergyTrace
from qmaxwell.solver import read_checkpoint

SMALL = """\
domain.cells = 6 6 6
material.eps_law = kerr
material.mu_law = kerr
initial.amplitude = 0.05
initial.radius = 0.35
solver.dt = 0.05
solver.t_final = 0.5
analysis.fit_lo = 0.0
assumptions.samples = 64
output.prefix = small
"""


@pytest.fixture
def small_cfg(tmp_path):
    p = tmp_path / "small.cfg"
    p.write_text(SMALL + f"output.dir = {tmp_path / 'out'}\n")
    return p


def test_init_writes_demo(tmp_path, capsys):
    p = tmp_path / "demo.cfg"
    assert cli.main(["init", str(p)]) == 0
    assert "domain.cells = 16 16 16" in p.read_text()
    assert cli.main(["init", "--full"]) == 0
    out = capsys.readouterr().out
    assert "solver.sat_split = 0.0" in out and "output.prefix = run" in out


def test_check_assumptions_pass(small_cfg, tmp_path, capsys):
    assert cli.main(["check-assumptions", "--config", str(small_cfg)]) == 0
    text = (tmp_path / "out" / "small_assumptions.txt").read_text()
    assert "eta_bar=0.5" in text and "kappa=1" in text
    assert "local_positivity.passed=true" in text


def test_check_assumptions_counterexample(tmp_path, capsys):
    p = tmp_path / "bad.cfg"
    p.write_text("domain.cells = 6 6 6\nimpedance.matrix = 1 0.5 0 0.5 1 0 0 0 1\n"
                 f"output.dir = {tmp_path}\n")
    assert cli.main(["check-assumptions", "--config", str(p)]) == 3
    assert "impedance_tangential" in capsys.readouterr().err


def test_run_then_verify_and_fit(small_cfg, tmp_path, capsys):
    out = tmp_path / "out"
    assert cli.main(["run", "--config", str(small_cfg)]) == 0
    for name in ("trace.csv", "trace_extra.csv", "final.chk", "summary.txt",
                 "energies.png", "divergence.png", "decay.png"):
        assert (out / f"small_{name}").exists(), name
    tr = EnergyTrace.from_csv(out / "small_trace.csv", out / "small_trace_extra.csv")
    assert len(tr) == 11
    header = (out / "small_trace.csv").read_text().splitlines()[0]
    assert header == ",".join(COLUMNS)
    chk = read_checkpoint(out / "small_final.chk")
    assert chk.t == pytest.approx(0.5)
    summary = (out / "small_summary.txt").read_text()
    assert "[decay_fit]" in summary and "e0.omega=" in summary

    capsys.readouterr()
    assert cli.main(["decay-fit", str(out / "small_trace.csv"), "--window", "0", "0.5", "--quantity", "e0"]) == 0
    assert "e0.r2=" in capsys.readouterr().out

    code = cli.main(["verify", "--config", str(small_cfg), "--which", "energy", "--require-artifacts"])
    lines = (out / "small_verify_energy.txt").read_text().splitlines()
    assert all(line.startswith("check=") for line in lines)
    assert code == (0 if all("status=pass" in line for line in lines) else 5)


def test_run_refuses_failed_assumptions_without_force(tmp_path, capsys):
    p = tmp_path / "neg.cfg"
    p.write_text("domain.cells = 6 6 6\nsolver.dt = 0.05\nsolver.t_final = 0.1\nimpedance.scale = 0.2\n"
                 f"output.dir = {tmp_path}\n")
    assert cli.main(["run", "--config", str(p), "--no-figures"]) == 3
    assert "error [ASSUMPTION]" in capsys.readouterr().err
    assert cli.main(["run", "--config", str(p), "--no-figures", "--force"]) == 0


def test_forced_run_beyond_radius_exits_4(tmp_path, capsys):
    p = tmp_path / "beyond.cfg"
    p.write_text("domain.cells = 12 12 12\nmaterial.eps_law = kerr\nmaterial.eps_kerr = -1.0\n"
                 "initial.kind = random_smooth\ninitial.amplitude = 0.3848\nsolver.dt = 0.02\n"
                 f"solver.t_final = 0.5\nassumptions.samples = 64\noutput.dir = {tmp_path}\n")
    assert cli.main(["run", "--config", str(p), "--no-figures"]) == 3
    capsys.readouterr()
    assert cli.main(["run", "--config", str(p), "--no-figures", "--force"]) == 4
    err = capsys.readouterr().err
    assert "NO_CONVERGENCE" in err and "t = " in err


def test_config_errors_exit_2(tmp_path, capsys):
    p = tmp_path / "bad.cfg"
    p.write_text("domain.cells = 6\nsolver.wat = 1\n")
    assert cli.main(["run", "--config", str(p)]) == 2
    err = capsys.readouterr().err
    assert "CONFIG_PARSE" in err and "line 2" in err
    assert cli.main(["run"]) == 2


def test_verify_missing_artifacts(small_cfg, capsys):
    assert cli.main(["verify", "--config", str(small_cfg), "--require-artifacts"]) == 5
    assert "MISSING_ARTIFACTS" in capsys.readouterr().err


def test_decay_fit_missing_trace(tmp_path):
    assert cli.main(["decay-fit", str(tmp_path / "none.csv")]) == 5


def test_workers_env(monkeypatch, small_cfg):
    monkeypatch.setenv("QMXW_WORKERS", "x")
    assert cli.main(["run", "--config", str(small_cfg), "--no-figures"]) == 2


def test_seed_and_outdir_override(small_cfg, tmp_path):
    other = tmp_path / "elsewhere"
    assert cli.main(["check-assumptions", "--config", str(small_cfg), "--out-dir", str(other),
                     "--seed-override", "3"]) == 0
    assert (other / "small_assumptions.txt").exists()
