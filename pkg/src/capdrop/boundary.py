"""Stiff evolution of the boundary potential ``h = f|circle``.

The boundary equation reads ``h'' = -kappa ell(D) h + N`` where ``ell`` is the
linearised curvature symbol and ``N`` collects everything else.  With
``omega_k = sqrt(kappa ell(k))`` the linear part is an exact per-mode rotation
of ``z = (omega h, h')``; ``N`` is treated by a Lawson-transformed trapezoid
rule whose implicit stage is resolved by Picard iteration.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .elliptic import (
    PulledBackLaplacian,
    harmonic_extension_perturbed,
    inv_div_potential,
    project_P,
    solve_pulled_back_dirichlet,
)
from .geometry import (
    CurvatureSymbol,
    VolumePotential,
    curvature_composed,
    extension_derivative,
    volume_extension,
)
from .spectral import BoundaryField, PolarGrid, sobolev_norm_boundary

log = logging.getLogger(__name__)


class RegimeError(RuntimeError):
    """The state left the small-displacement regime in which the scheme is defined."""


class BlowUpError(RuntimeError):
    """A run left the admissible ball; ``time`` is the last good time."""

    def __init__(self, msg: str, time: float):
        super().__init__(msg)
        self.time = time


class PicardError(RuntimeError):
    pass


# --- the square root of the curvature operator ------------------------------------


@dataclass(frozen=True)
class SqrtOperator:
    """``S`` with ``S^2 = ell(D)`` on modes ``|k| >= 2``; ``root[k] = 0`` marks modes outside its domain."""

    kappa: float
    root: np.ndarray

    @property
    def omega(self) -> np.ndarray:
        """Angular frequencies ``sqrt(kappa) S`` per wavenumber ``k = 0..K``."""
        return np.sqrt(self.kappa) * self.root

    @property
    def K(self) -> int:
        return self.root.size - 1

    def _pad(self, n: int) -> np.ndarray:
        out = np.zeros(n)
        m = min(n, self.root.size)
        out[:m] = self.root[:m]
        return out

    def apply(self, h: BoundaryField) -> BoundaryField:
        return BoundaryField(h.coeffs * self._pad(h.coeffs.size))

    def inverse(self, z: BoundaryField) -> BoundaryField:
        r = self._pad(z.coeffs.size)
        inv = np.divide(1.0, r, out=np.zeros_like(r), where=r > 0)
        return BoundaryField(z.coeffs * inv)


def build_sqrt_operator(kappa: float, symbol: CurvatureSymbol) -> SqrtOperator:
    if kappa <= 0:
        raise ValueError(f"kappa must be positive, got {kappa}")
    ell = np.asarray(symbol.ell, dtype=float)
    if ell.size > 2 and np.any(ell[2:] <= 0):
        bad = int(np.flatnonzero(ell[2:] <= 0)[0]) + 2
        raise RegimeError(f"curvature symbol is not positive at k={bad} ({ell[bad]:.3e})")
    root = np.zeros_like(ell)
    root[2:] = np.sqrt(ell[2:])
    return SqrtOperator(float(kappa), root)


def omega_table(S: SqrtOperator, nmodes: int) -> np.ndarray:
    """Frequencies on the full one-sided coefficient layout (Nyquist frozen at 0)."""
    return np.sqrt(S.kappa) * S._pad(nmodes)


# --- state and context --------------------------------------------------------


@dataclass(frozen=True)
class BoundaryState:
    """``z1 = sqrt(kappa) S h`` and ``z2 = h'`` on ``|k| >= 2``; ``low`` holds ``(h, h')`` on ``k = 1``."""

    z1: BoundaryField
    z2: BoundaryField
    low: tuple[complex, complex]
    S: SqrtOperator

    @property
    def kappa(self) -> float:
        return self.S.kappa

    @classmethod
    def from_h(cls, h: BoundaryField, hdot: BoundaryField, S: SqrtOperator) -> "BoundaryState":
        hc = _high(h.coeffs)
        hdc = _high(hdot.coeffs)
        z1 = np.sqrt(S.kappa) * S.apply(BoundaryField(hc)).coeffs
        return cls(BoundaryField(z1), BoundaryField(hdc), (complex(h.coeffs[1]), complex(hdot.coeffs[1])), S)

    def h(self) -> BoundaryField:
        c = self.S.inverse(self.z1).coeffs / np.sqrt(self.kappa)
        c[1] = self.low[0]
        return BoundaryField(c)

    def hdot(self) -> BoundaryField:
        c = self.z2.coeffs.copy()
        c[1] = self.low[1]
        return BoundaryField(c)

    def energy(self) -> float:
        """``||z||_0^2`` of the high-mode block."""
        return sobolev_norm_boundary(self.z1, 0.0) ** 2 + sobolev_norm_boundary(self.z2, 0.0) ** 2


def _high(c: np.ndarray) -> np.ndarray:
    c = np.array(c, dtype=complex)
    c[:2] = 0.0
    c[-1] = 0.0
    return c


@dataclass(frozen=True)
class DynamicsContext:
    """Interior data the boundary equation is driven by.

    ``v`` is the divergence-free tangent velocity of the boundary-fixing part
    of the flow; ``q0`` the interior pressure pulled back by ``id + grad f``
    (computed from the state when ``None``).
    """

    grid: PolarGrid
    kappa: float
    v: np.ndarray
    q0: np.ndarray | None = None
    f: VolumePotential | None = None

    @classmethod
    def trivial(cls, grid: PolarGrid, kappa: float) -> "DynamicsContext":
        return cls(grid, kappa, np.zeros((2,) + grid.shape), np.zeros(grid.shape))


# --- right-hand side --------------------------------------------------------------


@dataclass
class FluidTerms:
    """Everything the boundary equation and the interior velocity need at one instant."""

    vp: VolumePotential
    H: np.ndarray
    Dinv: np.ndarray
    fdot: np.ndarray
    u: np.ndarray
    Du: np.ndarray
    q0: np.ndarray
    curvature: BoundaryField
    F: np.ndarray
    gradp: np.ndarray
    G: np.ndarray
    vdot: np.ndarray
    hddot: np.ndarray
    l1_iters: int = 0
    extras: dict = field(default_factory=dict)

    @property
    def vorticity(self) -> np.ndarray:
        """``curl u`` composed with ``id + grad f``."""
        B = np.einsum("ikxy,kjxy->ijxy", self.Du, self.Dinv)
        return B[1, 0] - B[0, 1]


def _matvec(A: np.ndarray, x: np.ndarray) -> np.ndarray:
    return np.einsum("ij...,j...->i...", A, x)


def apply_L1_inverse(grid: PolarGrid, H: np.ndarray, w: np.ndarray, tol: float = 1e-12, max_iter: int = 60):
    """``L1^{-1} P w`` with ``L1 = P (I + D^2 f)``, by the fixed point ``a = P(w - D^2 f a)``."""
    Pw = project_P(grid, w)
    a = Pw
    scale = max(float(np.max(np.abs(a))), 1e-300)
    for it in range(1, max_iter + 1):
        a_new = Pw - project_P(grid, _matvec(H, a))
        step = float(np.max(np.abs(a_new - a)))
        a = a_new
        if not np.isfinite(step) or step > 1e6 * scale:
            break
        if step <= tol * scale:
            return a, it
    raise RegimeError(f"L1 inversion did not converge (last update {step:.3e})")


def fluid_terms(
    vp: VolumePotential,
    hdot: BoundaryField,
    v: np.ndarray,
    kappa: float,
    q0: np.ndarray | None = None,
    solver_tol: float = 1e-12,
) -> FluidTerms:
    """Assemble the pulled-back momentum balance on the reference disk.

    With ``u = grad f' + (I + D^2 f) v`` (the velocity composed with
    ``id + grad f``) and ``G = -grad p o (id + grad f) - 2 D^2 f' v - D^3 f(v, v)
    - (I + D^2 f) Dv v``, the interior velocity obeys ``v' = L1^{-1} P G`` and
    ``f'' = Delta_nu^{-1} div(G - D^2 f v')`` on the circle.
    """
    grid = vp.grid
    f = vp.f
    H = grid.hessian(f)
    Deta = H + np.eye(2)[:, :, None, None]
    det = Deta[0, 0] * Deta[1, 1] - Deta[0, 1] * Deta[1, 0]
    Dinv = np.array([[Deta[1, 1], -Deta[0, 1]], [-Deta[1, 0], Deta[0, 0]]]) / det

    fdot = extension_derivative(vp, hdot)
    gfd = grid.grad(fdot)
    u = gfd + v + _matvec(H, v)
    Du = grid.grad(u)

    L = PulledBackLaplacian.from_potential(grid, f, hess=H)
    if q0 is None:
        B = np.einsum("ikxy,kjxy->ijxy", Du, Dinv)
        rhs = -(B[0, 0] ** 2 + 2.0 * B[0, 1] * B[1, 0] + B[1, 1] ** 2)
        q0 = solve_pulled_back_dirichlet(L, rhs, 0.0, tol=solver_tol)

    curv = curvature_composed(vp)
    dev = curv.samples() - 1.0
    if np.any(dev):
        F = harmonic_extension_perturbed(L, dev, tol=solver_tol)
    else:
        F = np.zeros(grid.shape)
    gradp = _matvec(Dinv, grid.grad(q0 + kappa * F))

    Dv = grid.grad(v)
    T = grid.grad(H)  # T[i, j, l] = d_i d_j d_l f
    G = (
        -gradp
        - 2.0 * _matvec(grid.grad(gfd), v)
        - np.einsum("ijlxy,jxy,lxy->ixy", T, v, v)
        - _matvec(Deta, _matvec(Dv, v))
    )
    vdot, iters = apply_L1_inverse(grid, H, G)
    g = inv_div_potential(grid, G - _matvec(H, vdot))
    hdd = grid.boundary_modes(g)
    hdd[0] = 0.0
    hdd[-1] = 0.0
    return FluidTerms(vp, H, Dinv, fdot, u, Du, q0, curv, F, gradp, G, vdot, hdd, iters)


def assemble_rhs(state: BoundaryState, ctx: DynamicsContext) -> tuple[BoundaryField, BoundaryField]:
    """Non-stiff part of the z-system: ``(r1, r2)`` with ``r1 = 0`` and ``r2 = h'' + kappa ell h``.

    The ``k = 1`` entry of ``r2`` is the full acceleration of the low mode
    (``ell(1) = 0`` there by construction).
    """
    grid = ctx.grid
    h = state.h()
    vp = _extension(h, grid, ctx.f)
    ft = fluid_terms(vp, state.hdot(), ctx.v, ctx.kappa, ctx.q0)
    om = omega_table(state.S, grid.nmodes)
    r2 = ft.hddot + om**2 * h.coeffs
    return BoundaryField.zeros(grid.K), BoundaryField(r2)


def _extension(h: BoundaryField, grid: PolarGrid, prev: VolumePotential | None, **kw) -> VolumePotential:
    if prev is not None and np.array_equal(prev.h.coeffs, h.coeffs):
        return prev
    guess = None if prev is None else prev.f
    return volume_extension(h, grid=grid, guess=guess, **kw)


# --- time stepping ------------------------------------------------------------


def rotate(h: np.ndarray, hd: np.ndarray, omega: np.ndarray, dt: float):
    """Exact flow of ``h'' = -omega^2 h`` per mode (a shear where ``omega = 0``)."""
    c = np.cos(omega * dt)
    s = np.sin(omega * dt)
    sw = np.where(omega > 0, s / np.where(omega > 0, omega, 1.0), dt)
    return c * h + sw * hd, -omega * s * h + c * hd


def _combine(y: dict, n: dict, a: float) -> dict:
    return {k: (y[k] + a * n[k]) if k in n else y[k] for k in y}


def _rotate_state(y: dict, omega: np.ndarray, dt: float) -> dict:
    out = dict(y)
    out["h"], out["hd"] = rotate(y["h"], y["hd"], omega, dt)
    return out


# absolute floors below which a component's Picard change is not resolved further
_FLOORS = {"h": 1e-9, "hd": 1e-7}


def _rel_change(a: dict, b: dict) -> float:
    worst = 0.0
    for k in a:
        diff = float(np.max(np.abs(a[k] - b[k])))
        if diff == 0.0:
            continue
        scale = max(float(np.max(np.abs(a[k]))), float(np.max(np.abs(b[k]))), _FLOORS.get(k, 1e-300))
        worst = max(worst, diff / scale)
    return worst


def lawson_trapezoid(
    y: dict,
    n_y: dict,
    rhs: Callable[[dict], tuple[dict, object]],
    omega: np.ndarray,
    dt: float,
    tol: float = 1e-10,
    max_iter: int = 12,
):
    """One step of ``y' = A y + N(y)`` with ``A`` the per-mode rotation on ``(h, hd)``.

    ``y_{n+1} = e^{dt A}(y_n + dt/2 N(y_n)) + dt/2 N(y_{n+1})``, iterated from the
    Lawson-Euler predictor.  Returns ``(y_{n+1}, N(y_{n+1}), payload, iterations)``;
    the accepted iterate is the last one at which ``N`` was evaluated.
    """
    base = _rotate_state(_combine(y, n_y, 0.5 * dt), omega, dt)
    guess = _rotate_state(_combine(y, n_y, dt), omega, dt)
    history = []
    for it in range(1, max_iter + 1):
        n_g, payload = rhs(guess)
        new = _combine(base, n_g, 0.5 * dt)
        change = _rel_change(new, guess)
        history.append(change)
        if change <= tol:
            return guess, n_g, payload, it
        if not np.isfinite(change):
            break
        guess = new
    raise PicardError(f"Picard iteration did not converge (changes {history})")


# --- boundary-only evolution --------------------------------------------------


@dataclass
class FTrajectory:
    t: np.ndarray
    h: np.ndarray
    hdot: np.ndarray
    norm_f: np.ndarray
    norm_fdot: np.ndarray
    K3: float
    regime_warning: bool
    picard_iters: list

    def mode(self, k: int) -> np.ndarray:
        return self.h[:, k]


ContextPath = DynamicsContext | Sequence[tuple[float, DynamicsContext]] | Callable[[float], DynamicsContext]


def _context_at(path: ContextPath, t: float) -> DynamicsContext:
    if isinstance(path, DynamicsContext):
        return path
    if callable(path):
        return path(t)
    ts = [p[0] for p in path]
    j = int(np.clip(np.searchsorted(ts, t) - 1, 0, len(ts) - 2))
    (t0, c0), (t1, c1) = path[j], path[j + 1]
    w = 0.0 if t1 == t0 else min(max((t - t0) / (t1 - t0), 0.0), 1.0)
    q0 = None if c0.q0 is None or c1.q0 is None else (1 - w) * c0.q0 + w * c1.q0
    return DynamicsContext(c0.grid, c0.kappa, (1 - w) * c0.v + w * c1.v, q0)


def step_boundary_state(
    state: BoundaryState,
    ctx: ContextPath,
    dt: float,
    t: float = 0.0,
    tol: float = 1e-10,
    max_iter: int = 12,
) -> BoundaryState:
    """Advance ``state`` by ``dt`` (exact rotation plus implicit-trapezoid remainder)."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    c0 = _context_at(ctx, t)
    grid = c0.grid
    om = omega_table(state.S, grid.nmodes)
    y = {"h": state.h().coeffs, "hd": state.hdot().coeffs}

    def rhs_at(tt):
        c = _context_at(ctx, tt)

        def rhs(yy):
            h = BoundaryField(yy["h"])
            vp = _extension(h, grid, None)
            ft = fluid_terms(vp, BoundaryField(yy["hd"]), c.v, c.kappa, c.q0)
            return {"hd": ft.hddot + om**2 * yy["h"]}, ft

        return rhs

    n0, _ = rhs_at(t)(y)
    y1, _, _, _ = lawson_trapezoid(y, n0, rhs_at(t + dt), om, dt, tol, max_iter)
    return BoundaryState.from_h(BoundaryField(y1["h"]), BoundaryField(y1["hd"]), state.S)


def solve_f_interval(
    f1: BoundaryField,
    ctx_path: ContextPath,
    kappa: float,
    T: float,
    dt: float,
    symbol: CurvatureSymbol,
    s: float = 4.0,
    delta0: float = 0.05,
    K3: float | None = None,
    tol: float = 1e-10,
) -> FTrajectory:
    """Evolve ``h`` from ``h(0) = 0``, ``h'(0) = f1`` over ``[0, T]``.

    ``K3`` defaults to ``sqrt(kappa) ||f1||_{s+1/2}``; a configured ``K3`` that the
    data exceed only raises ``regime_warning``.
    """
    c0 = _context_at(ctx_path, 0.0)
    grid = c0.grid
    S = build_sqrt_operator(kappa, symbol)
    om = omega_table(S, grid.nmodes)
    n1 = sobolev_norm_boundary(f1, s + 0.5)
    measured = np.sqrt(kappa) * n1
    regime_warning = False
    if K3 is None:
        K3 = measured
    elif measured > K3 * (1 + 1e-12):
        regime_warning = True
        warnings.warn(f"initial velocity exceeds K3/sqrt(kappa): {measured:.3e} > {K3:.3e}", RuntimeWarning)

    nsteps = max(1, int(np.ceil(T / dt - 1e-9)))
    dt = T / nsteps
    hd0 = f1.mean_free().coeffs.copy()
    hd0[-1] = 0.0
    y = {"h": np.zeros(grid.nmodes, dtype=complex), "hd": hd0}
    cache: dict = {"vp": None}

    def make_rhs(tt):
        c = _context_at(ctx_path, tt)

        def rhs(yy):
            vp = _extension(BoundaryField(yy["h"]), grid, cache["vp"], s=s, delta0=delta0)
            cache["vp"] = vp
            ft = fluid_terms(vp, BoundaryField(yy["hd"]), c.v, kappa, c.q0)
            return {"hd": ft.hddot + om**2 * yy["h"]}, ft

        return rhs

    ts, hs, hds, nf, nfd, iters = [0.0], [y["h"]], [y["hd"]], [0.0], [n1], []
    n_y, _ = make_rhs(0.0)(y)
    for j in range(nsteps):
        t1 = (j + 1) * dt
        y, n_y, ft, it = lawson_trapezoid(y, n_y, make_rhs(t1), om, dt, tol)
        iters.append(it)
        amp = ft.vp.amplitude
        if not np.isfinite(amp) or amp > delta0:
            raise BlowUpError(f"||f||_(s+2) = {amp:.3e} exceeds delta0 = {delta0:g} at t = {t1:.6g}", j * dt)
        ts.append(t1)
        hs.append(y["h"])
        hds.append(y["hd"])
        nf.append(amp)
        nfd.append(sobolev_norm_boundary(BoundaryField(y["hd"]), s + 0.5))
    return FTrajectory(
        np.array(ts), np.array(hs), np.array(hds), np.array(nf), np.array(nfd), float(K3), regime_warning, iters
    )


def default_dt(kappa: float, symbol: CurvatureSymbol) -> float:
    """Quarter period of the fastest retained mode."""
    return float(np.pi / (2.0 * np.sqrt(kappa * symbol.ell[-1])))
