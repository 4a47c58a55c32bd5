import numpy as np
import pytest

from capdrop.config import SimConfig
from capdrop.fixed_euler import run_fixed_boundary
from capdrop.harness import (
    energy,
    kappa_sweep,
    loglog_fit,
    pressure_initial_gap,
    pressure_integral_compare,
    pressure_integral_uniform,
    scaling_check,
    trajectory_gaps,
    worker_count,
)
from capdrop.lagrangian import initial_state, make_dynamics, run_free_boundary

SMALL = dict(K=15, nr=16, t_end=0.01, stride=0.005)


def test_loglog_fit_exact_power_law():
    x = np.array([1e2, 1e3, 1e4])
    fit = loglog_fit(x, 3.0 * x**-0.5)
    assert fit.slope == pytest.approx(-0.5, abs=1e-12)
    assert fit.residual < 1e-12 and not fit.flagged
    assert fit.ci[0] <= -0.5 <= fit.ci[1]


def test_loglog_fit_flags_scatter():
    fit = loglog_fit([1.0, 10.0, 100.0, 1000.0], [1.0, 10.0, 0.1, 1.0])
    assert fit.flagged
    assert np.isnan(loglog_fit([1.0, 2.0], [0.0, 1.0]).slope)


def test_worker_cap(monkeypatch):
    monkeypatch.setenv("CAPDROP_WORKERS", "1")
    assert worker_count(8, 4) == 1
    monkeypatch.delenv("CAPDROP_WORKERS")
    assert worker_count(2, 4) == 2
    assert worker_count(8, 3) <= 3
    monkeypatch.setenv("CAPDROP_WORKERS", "many")
    with pytest.raises(ValueError):
        worker_count()


def test_energy_of_state(grid):
    cfg = SimConfig(preset="rotation")
    g, dyn, _ = make_dynamics(cfg)
    st = initial_state(cfg, g, dyn)
    ekin, esurf, etot = energy(st)
    assert ekin == pytest.approx(np.pi / 4, rel=1e-12)
    assert abs(esurf) < 1e-9 and etot == pytest.approx(ekin)
    assert energy(st, 2 * cfg.kappa)[0] == pytest.approx(ekin)


def test_trivial_data_gives_zero_gaps():
    cfg = SimConfig(preset="rest", **SMALL)
    free = run_free_boundary(cfg, record_fields=True)
    fixed = run_fixed_boundary(cfg, record_fields=True)
    assert pressure_integral_compare(free, fixed) < 1e-12
    assert pressure_integral_uniform(free, fixed) < 1e-12
    assert pressure_initial_gap(free, fixed) < 1e-9
    assert max(trajectory_gaps(free, fixed).values()) < 1e-12


def test_rotation_has_no_initial_pressure_obstruction():
    cfg = SimConfig(preset="rotation", kappa=100.0, **SMALL)
    free = run_free_boundary(cfg, record_fields=True)
    fixed = run_fixed_boundary(cfg, record_fields=True)
    assert pressure_initial_gap(free, fixed) < 1e-8


def test_comparison_errors():
    cfg = SimConfig(preset="rest", **SMALL)
    free = run_free_boundary(cfg, record_fields=True)
    other = run_fixed_boundary(cfg.replace(K=31, nr=32), record_fields=True)
    with pytest.raises(ValueError):
        pressure_initial_gap(free, other)
    fixed = run_fixed_boundary(cfg, record_fields=True)
    with pytest.raises(ValueError):
        pressure_integral_compare(free, fixed, 0.0, 0.0037)
    with pytest.raises(ValueError):
        pressure_integral_compare(run_free_boundary(cfg), fixed)


def test_small_sweep_report_structure():
    cfg = SimConfig(preset="stream", K=31, nr=32, t_end=0.004, stride=0.002)
    report, records, fixed = kappa_sweep(cfg, [400.0, 100.0], workers=1)
    assert report.kappas == [100.0, 400.0]
    assert report.complete and len(records) == 2
    assert np.all(report.series("sup_f") > 0)
    assert report.series("sup_f")[1] < report.series("sup_f")[0]
    quantities = {r["quantity"] for r in report.table()}
    assert {"sup_f", "eta_gap", "f_norm", "pressure_initial_gap"} <= quantities


def test_sweep_blow_up_gives_flagged_partial_report():
    cfg = SimConfig(preset="gradient-pulse", base="rest", delta0=1e-7, **SMALL)
    report, _, _ = kappa_sweep(cfg, [100.0, 400.0], workers=1)
    assert not report.complete and report.flagged
    assert any("kappa=" in n for n in report.notes)


def test_scaling_small():
    cfg = SimConfig(kappa=100.0, **SMALL)
    res = scaling_check(cfg, 2.0)
    assert res.defect < 1e-8 and res.defect_refined < 1e-8
    with pytest.raises(ValueError):
        scaling_check(cfg, 0.0)
