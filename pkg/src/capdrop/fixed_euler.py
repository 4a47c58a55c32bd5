"""Incompressible Euler flow in the fixed unit disk, in Lagrangian form.

The flow map ``zeta`` is carried at the grid nodes together with the Eulerian
velocity ``theta`` on the reference grid: ``zeta' = theta o zeta`` and
``theta' = -P(grad_theta theta)``, which is ``zeta'' = -Q(grad_theta theta) o zeta``
written in the Eulerian frame.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import ConfigError, SimConfig
from .elliptic import inv_div_potential, project_P
from .geometry import FlowMap, curve_length, invert_map
from .lagrangian import _sampling, limit_velocity
from .records import RunRecord
from .spectral import PointEvaluator, PolarGrid, get_grid


def _advect(grid: PolarGrid, X: np.ndarray) -> np.ndarray:
    """``grad_X X``."""
    return np.einsum("ijxy,jxy->ixy", grid.grad(X), X)


def z_map(zeta: FlowMap, X: np.ndarray, guess: np.ndarray | None = None) -> np.ndarray:
    """``Z(zeta, X) = Q(grad_theta theta) o zeta`` with ``theta = X o zeta^{-1}``."""
    grid = zeta.grid
    pre = invert_map(grid, zeta.displacement, grid.position, guess=guess)
    theta = PointEvaluator(grid, pre)(X)
    w = _advect(grid, theta)
    Qw = grid.grad(inv_div_potential(grid, w))
    return PointEvaluator(grid, zeta.positions)(Qw)


def euler_pressure(grid: PolarGrid, theta: np.ndarray, check: bool = True) -> np.ndarray:
    """Mean-free ``pi`` with ``Lap pi = -div(grad_theta theta)``, ``d pi/d nu = -<grad_theta theta, nu>``."""
    if check:
        div = float(np.max(np.abs(grid.div(theta))))
        flux = float(np.max(np.abs(grid.cos[:, 0] * theta[0, :, 0] + grid.sin[:, 0] * theta[1, :, 0])))
        scale = max(1.0, float(np.max(np.abs(theta))))
        if div > 1e-7 * scale or flux > 1e-7 * scale:
            raise ValueError(f"velocity is not divergence free and tangent (div {div:.2e}, flux {flux:.2e})")
    return inv_div_potential(grid, -_advect(grid, theta), check=True)


@dataclass
class FixedState:
    t: float
    zeta: np.ndarray
    theta: np.ndarray

    def flow_map(self, grid: PolarGrid) -> FlowMap:
        return FlowMap.from_positions(grid, self.zeta, volume_preserving=True, boundary_preserving=True)


def _rhs(grid: PolarGrid, zeta: np.ndarray, theta: np.ndarray):
    return PointEvaluator(grid, zeta)(theta), -project_P(grid, _advect(grid, theta))


def rk4_step(grid: PolarGrid, st: FixedState, dt: float) -> FixedState:
    z, th = st.zeta, st.theta
    k1 = _rhs(grid, z, th)
    k2 = _rhs(grid, z + 0.5 * dt * k1[0], th + 0.5 * dt * k1[1])
    k3 = _rhs(grid, z + 0.5 * dt * k2[0], th + 0.5 * dt * k2[1])
    k4 = _rhs(grid, z + dt * k3[0], th + dt * k3[1])
    zn = z + dt / 6.0 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
    tn = th + dt / 6.0 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
    return FixedState(st.t + dt, zn, tn)


def default_fixed_dt(grid: PolarGrid, theta: np.ndarray) -> float:
    """Explicit advection limit; the radial node spacing near ``r = 1`` is ``O(nr^-2)``."""
    vmax = float(np.max(np.hypot(theta[0], theta[1])))
    return 0.01 if vmax == 0 else min(0.01, 8.0 / (vmax * grid.nr**2))


def run_fixed_boundary(
    cfg: SimConfig,
    theta0: np.ndarray | None = None,
    record_fields: bool = False,
    dt: float | None = None,
    reproject_every: int = 10,
) -> RunRecord:
    """RK4 on ``(zeta, theta)``; ``theta`` is re-projected through ``P`` every ``reproject_every`` steps."""
    problems = cfg.validate()
    if problems:
        raise ConfigError(problems)
    grid = get_grid(cfg.K, cfg.nr)
    theta0 = limit_velocity(cfg, grid) if theta0 is None else np.asarray(theta0, dtype=float)
    div = float(np.max(np.abs(grid.div(theta0))))
    flux = float(np.max(np.abs(grid.cos[:, 0] * theta0[0, :, 0] + grid.sin[:, 0] * theta0[1, :, 0])))
    if div > 1e-7 * max(1.0, float(np.max(np.abs(theta0)))) or flux > 1e-7:
        raise ValueError(f"initial velocity must be divergence free and tangent (div {div:.2e}, flux {flux:.2e})")

    nsamples, per, dt, _ = _sampling(cfg, dt or cfg.dt or default_fixed_dt(grid, theta0))
    st = FixedState(0.0, grid.position.copy(), theta0.copy())
    rec = RunRecord("fixed", cfg.echo())
    rec.derived.update(dt=dt, steps=nsamples * per, E0=0.5 * grid.inner(theta0, theta0))
    w0 = grid.curl(theta0)
    pint = np.zeros((2,) + grid.shape)

    def pressure_gradient(s: FixedState) -> np.ndarray:
        gp = grid.grad(euler_pressure(grid, s.theta, check=False))
        return PointEvaluator(grid, s.zeta)(gp)

    gp_prev = pressure_gradient(st) if record_fields else None

    def sample(s: FixedState):
        fm = s.flow_map(grid)
        ev = PointEvaluator(grid, s.zeta)
        ekin = 0.5 * grid.inner(s.theta, s.theta)
        rec.add_row(
            t=s.t,
            E_kin=ekin,
            E_total=ekin,
            jac_defect=fm.volume_defect(),
            vorticity_drift=float(np.max(np.abs(ev(grid.curl(s.theta)) - w0))),
            boundary_length=curve_length(fm.boundary_curve()),
        )
        rec.derived["radial_defect"] = max(rec.derived.get("radial_defect", 0.0), fm.radial_defect())
        if record_fields:
            rec.add_fields(
                t=s.t,
                eta=s.zeta,
                eta_dot=ev(s.theta),
                beta=s.zeta,
                pressure_gradient=gp_prev,
                pressure_integral=pint,
            )

    sample(st)
    n = 0
    for j in range(nsamples):
        for i in range(per):
            st = rk4_step(grid, st, dt)
            n += 1
            st.t = n * dt
            if reproject_every and n % reproject_every == 0:
                st.theta = project_P(grid, st.theta)
            if not np.all(np.isfinite(st.theta)):
                rec.status = "blow-up"
                raise FloatingPointError(f"fixed-boundary run diverged at t = {st.t:.6g}")
            if record_fields:
                gp = pressure_gradient(st)
                pint = pint + 0.5 * dt * (gp + gp_prev)
                gp_prev = gp
        sample(st)
    rec.status = "complete"
    return rec
