import filecmp
import json

import pytest

from capdrop.cli import EXIT_BLOWUP, EXIT_CHECK, EXIT_INVALID, EXIT_OK, main, read_timeseries
from capdrop.config import SimConfig, format_config


def write_cfg(tmp_path, name="run.cfg", **kw):
    path = tmp_path / name
    path.write_text(format_config(SimConfig(**kw)))
    return str(path)


ROTATION = dict(preset="rotation", kappa=100.0, t_end=0.02, stride=0.01)


def test_simulate_free_rotation(tmp_path):
    cfg = write_cfg(tmp_path, **ROTATION)
    assert main(["simulate-free", cfg, "--out", str(tmp_path / "a")]) == EXIT_OK
    ts = read_timeseries(tmp_path / "a" / "timeseries.csv")
    assert ts["t"][-1] == pytest.approx(0.02)
    assert max(ts["f_norm"]) <= 1e-6
    man = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert man["status"] == "complete" and man["kind"] == "free"
    assert man["curvature_symbol"][3][1] == pytest.approx(24.0, rel=1e-9)
    assert "dt" in man["derived"]


def test_runs_are_byte_identical(tmp_path):
    cfg = write_cfg(tmp_path, **ROTATION)
    for d in ("a", "b"):
        assert main(["simulate-free", cfg, "--out", str(tmp_path / d)]) == EXIT_OK
        assert main(["simulate-fixed", cfg, "--out", str(tmp_path / d / "fixed")]) == EXIT_OK
    assert filecmp.cmp(tmp_path / "a" / "timeseries.csv", tmp_path / "b" / "timeseries.csv", shallow=False)
    assert filecmp.cmp(
        tmp_path / "a" / "fixed" / "timeseries.csv", tmp_path / "b" / "fixed" / "timeseries.csv", shallow=False
    )


def test_report(tmp_path, capsys):
    cfg = write_cfg(tmp_path, **ROTATION)
    main(["simulate-fixed", cfg, "--out", str(tmp_path / "f")])
    capsys.readouterr()
    assert main(["report", str(tmp_path / "f")]) == EXIT_OK
    out = capsys.readouterr().out
    assert "fixed" in out and "complete" in out
    assert main(["report", str(tmp_path / "missing")]) == EXIT_INVALID


def test_invalid_config_lists_every_violation(tmp_path, capsys):
    path = tmp_path / "bad.cfg"
    path.write_text("[domain]\nkappa = -1\nsobolev_s = 2\n[time]\nt_end = 0\n")
    assert main(["simulate-free", str(path)]) == EXIT_INVALID
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 3
    assert err[0].startswith("config error: line 2")


def test_invalid_arguments(tmp_path):
    assert main(["no-such-verb"]) == EXIT_INVALID
    assert main(["simulate-free", str(tmp_path / "absent.cfg")]) == EXIT_INVALID
    cfg = write_cfg(tmp_path, **ROTATION)
    assert main(["sweep", cfg, "--kappas", "100"]) == EXIT_INVALID
    assert main(["sweep", cfg, "--kappas", "a,b"]) == EXIT_INVALID


def test_verify_geometry_passes(capsys):
    assert main(["verify-geometry", "--samples", "4"]) == EXIT_OK
    out = capsys.readouterr().out
    assert out.count("PASS") == 4 and "FAIL" not in out


def test_scale_check_failure_exit(tmp_path):
    cfg = write_cfg(tmp_path, K=15, nr=16, kappa=100.0, t_end=0.01, stride=0.005)
    assert main(["scale-check", cfg, "--tol", "1e-300"]) == EXIT_CHECK
    assert main(["scale-check", cfg]) == EXIT_OK


def test_blow_up_exit(tmp_path):
    cfg = write_cfg(tmp_path, preset="gradient-pulse", base="rest", delta0=1e-7, K=15, nr=16, t_end=0.01)
    assert main(["simulate-free", cfg, "--out", str(tmp_path / "b")]) == EXIT_BLOWUP
    man = json.loads((tmp_path / "b" / "manifest.json").read_text())
    assert man["status"] == "blow-up"


def test_small_sweep_writes_report(tmp_path):
    cfg = write_cfg(tmp_path, preset="stream", t_end=0.004, stride=0.002)
    out = tmp_path / "sw"
    assert main(["sweep", cfg, "--kappas", "100,400", "--workers", "1", "--out", str(out)]) == EXIT_OK
    assert (out / "kappa_100" / "timeseries.csv").exists()
    assert (out / "fixed" / "manifest.json").exists()
    header = (out / "report.csv").read_text().splitlines()[0]
    assert header == "record,quantity,kappa,value,lower,upper,residual,status"
