import numpy as np
import pytest

from capdrop.config import SimConfig
from capdrop.fixed_euler import FixedState, default_fixed_dt, euler_pressure, rk4_step, run_fixed_boundary, z_map
from capdrop.geometry import FlowMap
from capdrop.harness import rotation_error
from capdrop.lagrangian import limit_velocity


def test_rotation_pressure(grid):
    p = euler_pressure(grid, np.stack([-grid.y, grid.x]))
    np.testing.assert_allclose(p, (grid.x**2 + grid.y**2) / 2 - 0.25, atol=1e-13)


def test_pressure_rejects_compressible_field(grid):
    with pytest.raises(ValueError):
        euler_pressure(grid, np.stack([grid.x, grid.y]))


def test_z_map_rotation(grid):
    # for theta = rotation, grad_theta theta = -x is a gradient, so Z = -zeta
    th = 0.4
    c, s = np.cos(th), np.sin(th)
    pos = np.stack([c * grid.x - s * grid.y, s * grid.x + c * grid.y])
    zeta = FlowMap.from_positions(grid, pos, volume_preserving=True, boundary_preserving=True)
    X = np.stack([-pos[1], pos[0]])
    np.testing.assert_allclose(z_map(zeta, X), -pos, atol=1e-10)


def test_rk4_fourth_order_on_rotation(grid):
    errs = []
    for dt in (0.2, 0.1):
        st = FixedState(0.0, grid.position.copy(), np.stack([-grid.y, grid.x]))
        for _ in range(int(round(1.0 / dt))):
            st = rk4_step(grid, st, dt)
        exact = np.stack([np.cos(1) * grid.x - np.sin(1) * grid.y, np.sin(1) * grid.x + np.cos(1) * grid.y])
        errs.append(np.max(np.abs(st.zeta - exact)))
    assert np.log2(errs[0] / errs[1]) > 3.8


def test_default_dt_scales_with_resolution(grid, small_grid):
    th = np.stack([-grid.y, grid.x])
    assert default_fixed_dt(grid, th) < default_fixed_dt(small_grid, np.stack([-small_grid.y, small_grid.x]))
    assert default_fixed_dt(grid, 0 * th) == 0.01


def test_stream_run_conserves_invariants():
    rec = run_fixed_boundary(SimConfig(preset="stream", t_end=0.1, stride=0.05), record_fields=True)
    assert rec.status == "complete"
    E = rec.column("E_kin")
    assert np.max(np.abs(E - E[0])) / E[0] < 1e-8
    assert rec.column("jac_defect").max() < 1e-8
    assert rec.column("vorticity_drift").max() < 1e-6
    assert rec.derived["radial_defect"] < 1e-8
    assert np.all(rec.column("E_surf") == 0)
    assert rec.fields["pressure_integral"][0].max() == 0


def test_rotation_run_exact(grid):
    rec = run_fixed_boundary(SimConfig(preset="rotation", t_end=0.5, stride=0.25), record_fields=True)
    assert rotation_error(rec)[-1] < 1e-9


def test_rejects_divergent_initial_data(grid):
    with pytest.raises(ValueError):
        run_fixed_boundary(SimConfig(t_end=0.01), theta0=np.stack([grid.x, grid.y]))


def test_limit_velocity_is_projected(grid):
    u = limit_velocity(SimConfig(preset="gradient-pulse", base="rest"), grid)
    np.testing.assert_allclose(u, 0.0, atol=1e-14)
