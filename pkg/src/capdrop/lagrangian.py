"""Free-boundary time stepping in Lagrangian form.

The flow map is carried as ``eta = (id + grad f) o beta``: ``f`` through its
boundary values ``h`` (interior by the volume-preserving extension), ``beta``
by its values at the grid nodes, and ``beta' = v o beta`` with ``v`` a
divergence-free tangent field on the reference disk.  One timestep is a
Lawson trapezoid step of the coupled system ``(h, h', v, beta)`` whose
implicit stage is a Picard fixed point.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property, lru_cache

import numpy as np

from .boundary import (
    BlowUpError,
    FluidTerms,
    PicardError,
    RegimeError,
    _extension,
    _matvec,
    build_sqrt_operator,
    default_dt,
    fluid_terms,
    lawson_trapezoid,
    omega_table,
)
from .config import ConfigError, SimConfig
from .elliptic import (
    CompatibilityError,
    ConvergenceError,
    PulledBackLaplacian,
    inv_div_potential,
    project_P,
    solve_pulled_back_dirichlet,
    solve_pulled_back_neumann,
)
from .geometry import (
    CurvatureSymbol,
    FlowMap,
    VolumePotential,
    curve_length,
    displaced_boundary,
    invert_map,
    linearized_curvature_symbol,
)
from .records import RunRecord
from .spectral import BoundaryField, PointEvaluator, PolarGrid, get_grid, sobolev_norm_boundary

log = logging.getLogger(__name__)

__all__ = [
    "Decomposition",
    "FreeBoundaryState",
    "FlowMap",
    "advance_timestep",
    "decompose_embedding",
    "initial_velocity",
    "run_free_boundary",
    "solve_h_neumann",
    "solve_interior_pressure",
    "step_z",
]


@lru_cache(maxsize=8)
def curvature_symbol(K: int, nr: int) -> CurvatureSymbol:
    return linearized_curvature_symbol(K, nr)


# --- initial data ---------------------------------------------------------------


def stream_function(grid: PolarGrid, amplitude: float) -> np.ndarray:
    """``psi = A (1 - r^2)(1 + 2xy + x)``: constant on the circle, non-radial."""
    x, y = grid.x, grid.y
    return amplitude * (1.0 - x * x - y * y) * (1.0 + 2.0 * x * y + x)


def pulse_potential(grid: PolarGrid, amplitude: float) -> np.ndarray:
    """Harmonic ``g0 = A (r^2 cos 2 theta + r^3 sin 3 theta / 2)``."""
    x, y = grid.x, grid.y
    return amplitude * ((x * x - y * y) + 0.5 * (3.0 * x * x * y - y**3))


def base_velocity(grid: PolarGrid, cfg: SimConfig, base: str) -> np.ndarray:
    if base == "rest":
        return np.zeros((2,) + grid.shape)
    if base == "rotation":
        return cfg.omega * np.stack([-grid.y, grid.x])
    if base == "stream":
        d = grid.grad(stream_function(grid, cfg.amplitude))
        return np.stack([d[1], -d[0]])
    raise ConfigError([f"unknown base velocity {base!r}"])


def initial_velocity(cfg: SimConfig, grid: PolarGrid | None = None) -> np.ndarray:
    """``u0 = theta0 + kappa^{-1/2} grad g0`` for the pulse preset, else the base field alone."""
    grid = grid or get_grid(cfg.K, cfg.nr)
    if cfg.preset == "gradient-pulse":
        return base_velocity(grid, cfg, cfg.base) + grid.grad(pulse_potential(grid, cfg.pulse)) / np.sqrt(cfg.kappa)
    return base_velocity(grid, cfg, cfg.preset)


def limit_velocity(cfg: SimConfig, grid: PolarGrid | None = None) -> np.ndarray:
    """``P u0`` in the limit of infinite surface tension (the fixed-boundary data)."""
    grid = grid or get_grid(cfg.K, cfg.nr)
    base = cfg.base if cfg.preset == "gradient-pulse" else cfg.preset
    return project_P(grid, base_velocity(grid, cfg, base))


# --- decomposition ------------------------------------------------------------


@dataclass(frozen=True)
class Decomposition:
    """``eta = (id + grad f) o beta`` with ``beta`` boundary preserving."""

    beta: FlowMap
    f: VolumePotential
    defect: float
    iterations: int = 0

    def compose(self) -> FlowMap:
        return compose(self.f, self.beta)


def compose(vp: VolumePotential, beta: FlowMap) -> FlowMap:
    grid = vp.grid
    pos = beta.positions
    gf = PointEvaluator(grid, pos)(grid.grad(vp.f))
    return FlowMap(grid, pos + gf - grid.position, volume_preserving=beta.volume_preserving)


def _modes_at_angles(phi: np.ndarray, vals: np.ndarray, K: int) -> np.ndarray:
    """One-sided Fourier coefficients of a function sampled at the (non-uniform) angles ``phi``."""
    m = np.arange(1, K + 1)
    B = np.concatenate(
        [np.ones((phi.size, 1)), np.cos(np.outer(phi, m)), np.sin(np.outer(phi, m)), np.cos((K + 1) * phi)[:, None]],
        axis=1,
    )
    a = np.linalg.lstsq(B, vals, rcond=None)[0]
    c = np.zeros(K + 2, dtype=complex)
    c[0] = a[0]
    c[1 : K + 1] = 0.5 * (a[1 : K + 1] - 1j * a[K + 1 : 2 * K + 1])
    c[K + 1] = a[-1]
    return c


def decompose_embedding(
    eta: FlowMap,
    guess: VolumePotential | None = None,
    tol: float = 1e-9,
    max_iter: int = 50,
    s: float = 4.0,
    delta0: float = 0.05,
) -> Decomposition:
    """Split ``eta`` into a boundary displacement ``grad f`` and a boundary-preserving ``beta``.

    Given ``f``, ``beta = (id + grad f)^{-1} o eta`` by Newton inversion; the
    radial excess of ``beta`` on the circle is then absorbed into ``h`` through
    the inverse Dirichlet-to-Neumann map (``h_k += rho_k / k``).
    """
    grid = eta.grid
    target = eta.positions
    h = guess.h if guess is not None else BoundaryField.zeros(grid.K)
    vp = guess
    y = None
    k = np.arange(grid.nmodes, dtype=float)
    inv_k = np.divide(1.0, k, out=np.zeros_like(k), where=k > 0)
    inv_k[-1] = 0.0
    history = []
    for it in range(1, max_iter + 1):
        vp = _extension(h, grid, vp, s=s, delta0=delta0)
        y = invert_map(grid, grid.grad(vp.f), target, guess=y)
        rho = np.hypot(y[0, :, 0], y[1, :, 0]) - 1.0
        defect = float(np.max(np.abs(rho)))
        history.append(defect)
        if defect <= tol:
            yb = y.copy()
            yb[:, :, 0] /= np.hypot(yb[0, :, 0], yb[1, :, 0])
            beta = FlowMap.from_positions(grid, yb, volume_preserving=eta.volume_preserving, boundary_preserving=True)
            return Decomposition(beta, vp, compose(vp, beta).displacement_defect(eta), it)
        if not np.isfinite(defect) or (it > 3 and defect > 1e3 * history[0]):
            break
        rc = _modes_at_angles(np.arctan2(y[1, :, 0], y[0, :, 0]), rho, grid.K)
        h = BoundaryField(h.coeffs + rc * inv_k)
    raise ConvergenceError(
        f"decomposition did not converge in {max_iter} iterations (radial defect {history[-1]:.3e});"
        " the map is outside the tubular neighbourhood",
        history[-1],
        history,
    )


# --- pressure, h and z ------------------------------------------------------------


def _pulled_back(vp: VolumePotential) -> tuple[PulledBackLaplacian, np.ndarray]:
    L = PulledBackLaplacian.from_potential(vp.grid, vp.f)
    return L, L.Dinv


def solve_interior_pressure(u: np.ndarray, vp: VolumePotential, tol: float = 1e-12) -> np.ndarray:
    """``q0 = p0 o (id + grad f)`` where ``Lap p0 = -div(grad_u u)``, ``p0 = 0`` on the moving boundary.

    ``u`` is the velocity composed with ``id + grad f`` on the reference grid.
    """
    grid = vp.grid
    L, Dinv = _pulled_back(vp)
    B = np.einsum("ikxy,kjxy->ijxy", grid.grad(u), Dinv)
    rhs = -(B[0, 0] ** 2 + 2.0 * B[0, 1] * B[1, 0] + B[1, 1] ** 2)
    return solve_pulled_back_dirichlet(L, rhs, 0.0, tol=tol)


def moving_normal(vp: VolumePotential) -> np.ndarray:
    """Unit outer normal of the displaced boundary, at ``(id + grad f)`` of the reference nodes."""
    L, Dinv = _pulled_back(vp)
    grid = vp.grid
    nu = np.stack([grid.cos[:, 0], grid.sin[:, 0]])
    n = np.einsum("abx,bx->ax", Dinv[:, :, :, 0], nu)
    return n / np.hypot(n[0], n[1])


def solve_h_neumann(
    vp: VolumePotential, fdot: np.ndarray, v: np.ndarray, compat_tol: float = 1e-7
) -> np.ndarray:
    """``grad h o (id + grad f)`` for the harmonic ``h`` with normal derivative ``<u, N>``.

    ``u = grad f' + D^2 f v + v`` is the composed velocity.
    """
    grid = vp.grid
    L, Dinv = _pulled_back(vp)
    u = grid.grad(fdot) + v + _matvec(L.Deta - np.eye(2)[:, :, None, None], v)
    N = moving_normal(vp)
    g = np.sum(u[:, :, 0] * N, axis=0)
    curve = displaced_boundary(vp)
    speed = np.hypot(*[np.fft.irfft(np.fft.rfft(c) * 1j * np.arange(grid.nmodes), n=grid.ntheta) for c in curve])
    flux = float(np.mean(g * speed) * 2.0 * np.pi)
    scale = float(np.mean(np.abs(g) * speed) * 2.0 * np.pi)
    if abs(flux) > compat_tol * max(scale, 1.0):
        raise CompatibilityError(f"Neumann data for h carry net flux {flux:.3e}")
    htil = solve_pulled_back_neumann(L, None, g)
    return _matvec(Dinv, grid.grad(htil))


# --- the coupled state ------------------------------------------------------------


class _Dynamics:
    """``N(y)`` for ``y = (h, h', v, beta)``; caches the last extension as a Newton seed."""

    def __init__(self, grid: PolarGrid, kappa: float, omega: np.ndarray, s: float, delta0: float):
        self.grid = grid
        self.kappa = kappa
        self.omega = omega
        self.s = s
        self.delta0 = delta0
        self.last_vp: VolumePotential | None = None
        self.evals = 0

    def __call__(self, y: dict):
        grid = self.grid
        vp = _extension(BoundaryField(y["h"]), grid, self.last_vp, s=self.s, delta0=self.delta0)
        self.last_vp = vp
        ft = fluid_terms(vp, BoundaryField(y["hd"]), y["v"], self.kappa)
        ev = PointEvaluator(grid, y["beta"])
        self.evals += 1
        n = {"hd": ft.hddot + self.omega**2 * y["h"], "v": ft.vdot, "beta": ev(y["v"])}
        return n, (ft, ev)


@dataclass
class FreeBoundaryState:
    """Time, the evolved variables and the fluid terms evaluated at them."""

    t: float
    y: dict
    n: dict
    ft: FluidTerms
    ev: PointEvaluator
    kappa: float
    extras: dict = field(default_factory=dict)

    @property
    def grid(self) -> PolarGrid:
        return self.ft.vp.grid

    @property
    def h(self) -> BoundaryField:
        return BoundaryField(self.y["h"])

    @property
    def hdot(self) -> BoundaryField:
        return BoundaryField(self.y["hd"])

    @property
    def v(self) -> np.ndarray:
        return self.y["v"]

    @property
    def beta(self) -> FlowMap:
        return FlowMap.from_positions(self.grid, self.y["beta"], volume_preserving=True, boundary_preserving=True)

    @property
    def f(self) -> VolumePotential:
        return self.ft.vp

    @property
    def q0(self) -> np.ndarray:
        return self.ft.q0

    @cached_property
    def eta(self) -> FlowMap:
        return compose(self.ft.vp, self.beta)

    @cached_property
    def eta_dot(self) -> np.ndarray:
        """``u o eta`` on the reference grid."""
        return self.ev(self.ft.u)

    @cached_property
    def pressure_gradient(self) -> np.ndarray:
        """``grad p o eta``."""
        return self.ev(self.ft.gradp)

    @cached_property
    def gradh(self) -> np.ndarray:
        """``grad h o eta``."""
        return self.ev(solve_h_neumann(self.ft.vp, self.ft.fdot, self.v))

    @property
    def z(self) -> np.ndarray:
        """``w o eta`` where ``u = w + grad h`` (``w`` divergence free, tangent to the moving boundary)."""
        return self.eta_dot - self.gradh

    @cached_property
    def decomposition(self) -> Decomposition:
        return Decomposition(self.beta, self.ft.vp, self.beta.radial_defect())

    def lagrangian_vorticity(self) -> np.ndarray:
        return self.ev(self.ft.vorticity)

    def energy(self) -> tuple[float, float, float]:
        grid = self.grid
        ekin = 0.5 * grid.inner(self.ft.u, self.ft.u)
        esurf = self.kappa * (curve_length(displaced_boundary(self.ft.vp)) - 2.0 * np.pi)
        return ekin, esurf, ekin + esurf


def initial_state(cfg: SimConfig, grid: PolarGrid, dyn: _Dynamics, u0: np.ndarray | None = None) -> FreeBoundaryState:
    u0 = initial_velocity(cfg, grid) if u0 is None else u0
    v0 = project_P(grid, u0)
    hd = grid.boundary_modes(inv_div_potential(grid, u0))
    hd[0] = 0.0
    hd[-1] = 0.0
    y = {"h": np.zeros(grid.nmodes, dtype=complex), "hd": hd, "v": v0, "beta": grid.position.copy()}
    n, (ft, ev) = dyn(y)
    return FreeBoundaryState(0.0, y, n, ft, ev, dyn.kappa)


def advance_timestep(
    state: FreeBoundaryState,
    dt: float,
    dyn: _Dynamics,
    picard_tol: float = 1e-10,
    picard_max: int = 12,
    retries: int = 5,
) -> FreeBoundaryState:
    """One accepted step of length ``dt``; a failed Picard solve is retried as two half steps."""
    try:
        y1, n1, (ft, ev), it = lawson_trapezoid(state.y, state.n, dyn, dyn.omega, dt, picard_tol, picard_max)
    except (PicardError, RegimeError, ConvergenceError) as exc:
        if retries <= 0:
            raise PicardError(f"step at t={state.t:.6g} failed after halving dt five times: {exc}") from exc
        log.info("step at t=%.6g rejected (%s); halving dt", state.t, exc)
        mid = advance_timestep(state, dt / 2, dyn, picard_tol, picard_max, retries - 1)
        return advance_timestep(mid, dt / 2, dyn, picard_tol, picard_max, retries - 1)
    new = FreeBoundaryState(state.t + dt, y1, n1, ft, ev, state.kappa, {"picard": it})
    # consistency of the momentum balance: d/dt u + Du v = -grad p in the eta-tilde frame
    grid = dyn.grid
    du = (ft.u - state.ft.u) / dt
    adv = 0.5 * (_matvec(ft.Du, y1["v"]) + _matvec(state.ft.Du, state.y["v"]))
    gp = 0.5 * (ft.gradp + state.ft.gradp)
    new.extras["chi_gap"] = grid.l2_norm(du + adv + gp) / max(grid.l2_norm(gp), 1e-300)
    return new


def _sampling(cfg: SimConfig, dt_target: float) -> tuple[int, int, float, float]:
    interval = cfg.sample_interval
    nsamples = max(1, int(np.ceil(cfg.t_end / interval - 1e-9)))
    interval = cfg.t_end / nsamples
    per = max(1, int(np.ceil(interval / dt_target - 1e-9)))
    return nsamples, per, interval / per, interval


def run_free_boundary(
    cfg: SimConfig,
    u0: np.ndarray | None = None,
    record_fields: bool = False,
) -> RunRecord:
    """Integrate from ``eta = id``, ``eta' = u0`` to ``cfg.t_end``; one record row per sample time."""
    problems = cfg.validate()
    if problems:
        raise ConfigError(problems)
    grid = get_grid(cfg.K, cfg.nr)
    symbol = curvature_symbol(cfg.K, cfg.nr)
    S = build_sqrt_operator(cfg.kappa, symbol)
    om = omega_table(S, grid.nmodes)
    dyn = _Dynamics(grid, cfg.kappa, om, cfg.sobolev_s, cfg.delta0)
    u0 = initial_velocity(cfg, grid) if u0 is None else np.asarray(u0, dtype=float)
    if cfg.theorem_regime:
        qn = grid.sobolev_norm(u0 - project_P(grid, u0), cfg.sobolev_s)
        if qn * np.sqrt(cfg.kappa) > cfg.regime_c:
            raise ConfigError([f"||Q u0||_s = {qn:.3e} exceeds C/sqrt(kappa) with C = {cfg.regime_c:g}"])

    nsamples, per, dt, interval = _sampling(cfg, cfg.dt or default_dt(cfg.kappa, symbol))
    state = initial_state(cfg, grid, dyn, u0)
    f1 = state.hdot
    rec = RunRecord("free", cfg.echo(), symbol.table())
    rec.derived.update(
        dt=dt,
        steps=nsamples * per,
        K3=float(np.sqrt(cfg.kappa) * sobolev_norm_boundary(f1, cfg.sobolev_s + 0.5)),
        E0=0.5 * grid.inner(u0, u0),
    )
    w0 = state.lagrangian_vorticity()
    pint = np.zeros((2,) + grid.shape)
    gp_prev = state.pressure_gradient if record_fields else None

    def sample(st: FreeBoundaryState, chi: float):
        ekin, esurf, etot = st.energy()
        rec.add_row(
            t=st.t,
            E_kin=ekin,
            E_surf=esurf,
            E_total=etot,
            f_norm=st.f.amplitude,
            fdot_norm=sobolev_norm_boundary(st.hdot, cfg.sobolev_s + 0.5),
            jac_defect=st.eta.volume_defect(),
            vorticity_drift=float(np.max(np.abs(st.lagrangian_vorticity() - w0))),
            chi_gap=chi,
            boundary_length=curve_length(displaced_boundary(st.f)),
        )
        if record_fields:
            rec.add_fields(
                t=st.t,
                eta=st.eta.positions,
                eta_dot=st.eta_dot,
                beta=st.y["beta"],
                pressure_gradient=st.pressure_gradient,
                pressure_integral=pint,
            )

    sample(state, 0.0)
    picard = []
    for j in range(nsamples):
        chi = 0.0
        for i in range(per):
            try:
                state = advance_timestep(state, dt, dyn, cfg.picard_tol, cfg.picard_max)
            except (PicardError, RegimeError, ConvergenceError) as exc:
                rec.status = "blow-up"
                err = BlowUpError(f"solver failed after t = {state.t:.6g}: {exc}", state.t)
                err.record = rec
                raise err from exc
            state.t = (j * per + i + 1) * dt
            picard.append(state.extras.get("picard", 0))
            chi = max(chi, state.extras.get("chi_gap", 0.0))
            amp = state.f.amplitude
            if not np.isfinite(amp) or amp > cfg.delta0:
                rec.status = "blow-up"
                err = BlowUpError(
                    f"||f||_(s+2) = {amp:.3e} exceeds delta0 = {cfg.delta0:g} after t = {state.t - dt:.6g}",
                    state.t - dt,
                )
                err.record = rec
                raise err
            if record_fields:
                gp = state.pressure_gradient
                pint = pint + 0.5 * dt * (gp + gp_prev)
                gp_prev = gp
        sample(state, chi)
    rec.derived["picard_mean"] = float(np.mean(picard)) if picard else 0.0
    rec.derived["rhs_evaluations"] = dyn.evals
    rec.status = "complete"
    return rec


def step_z(state: FreeBoundaryState, dt: float, dyn: _Dynamics, **kw) -> np.ndarray:
    """``z = w o eta`` after one step; ``w`` is the divergence-free part of ``u`` in the moving domain."""
    return advance_timestep(state, dt, dyn, **kw).z


def make_dynamics(cfg: SimConfig) -> tuple[PolarGrid, _Dynamics, float]:
    """Grid, right-hand side and default step for ``cfg`` (for stepping by hand)."""
    grid = get_grid(cfg.K, cfg.nr)
    symbol = curvature_symbol(cfg.K, cfg.nr)
    S = build_sqrt_operator(cfg.kappa, symbol)
    dyn = _Dynamics(grid, cfg.kappa, omega_table(S, grid.nmodes), cfg.sobolev_s, cfg.delta0)
    return grid, dyn, cfg.dt or default_dt(cfg.kappa, symbol)
