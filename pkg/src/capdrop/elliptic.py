"""Elliptic solves on the unit disk and on near-disk domains pulled back to it."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np

from .spectral import BoundaryField, PolarGrid

log = logging.getLogger(__name__)

COMPAT_SILENT = 1e-9
COMPAT_HARD = 1e-6


class CompatibilityError(ValueError):
    """Neumann data violate the divergence theorem beyond tolerance."""


class ConvergenceError(RuntimeError):
    def __init__(self, msg: str, residual: float | None = None, history=None):
        super().__init__(msg)
        self.residual = residual
        self.history = list(history or [])


def _bdata(grid: PolarGrid, g) -> np.ndarray:
    """Unnormalised rfft coefficients of boundary data (field, samples or scalar)."""
    if isinstance(g, BoundaryField):
        if g.coeffs.size != grid.nmodes:
            raise ValueError(f"boundary field has K={g.K}, grid has K={grid.K}")
        return g.coeffs * grid.ntheta
    g = np.asarray(g, dtype=float)
    if g.ndim == 0:
        out = np.zeros(grid.nmodes, dtype=complex)
        out[0] = float(g) * grid.ntheta
        return out
    return np.fft.rfft(g, axis=-1)


def solve_poisson_dirichlet_disk(grid: PolarGrid, rhs, g=0.0) -> np.ndarray:
    """Solve ``Lap u = rhs`` in the disk with ``u = g`` on the circle."""
    rhs = np.zeros(grid.shape) if rhs is None else np.asarray(rhs, dtype=float)
    rh = grid.to_modes(rhs)
    gh = _bdata(grid, g)
    gh = np.broadcast_to(gh, rh.shape[:-1])
    b = rh[..., 1:] - grid.lap[:, 1:, 0] * gh[..., None]
    uh = np.empty_like(rh)
    uh[..., 0] = gh
    uh[..., 1:] = grid.apply_radial(grid._dir_inv, b)
    return grid.from_modes(uh)


def solve_laplace_dirichlet_disk(grid: PolarGrid, g) -> np.ndarray:
    """Harmonic extension of ``g``; mode ``k`` extends as ``r^|k| e^{ik theta}``."""
    return solve_poisson_dirichlet_disk(grid, None, g)


def neumann_defect(grid: PolarGrid, rhs, g) -> float:
    """``int rhs - oint g``: zero for compatible Neumann data."""
    gh = _bdata(grid, g)
    return float(grid.integrate(rhs) - 2.0 * np.pi * gh[..., 0].real / grid.ntheta)


def _check_compat(defect: float, scale: float):
    rel = abs(defect) / max(1.0, scale)
    if rel > COMPAT_HARD:
        raise CompatibilityError(f"Neumann compatibility defect {defect:.3e} exceeds {COMPAT_HARD:g}")
    if rel > COMPAT_SILENT:
        warnings.warn(f"projecting out Neumann compatibility defect {defect:.3e}", RuntimeWarning, stacklevel=3)


def solve_laplace_neumann_disk(grid: PolarGrid, rhs, g, check: bool = True) -> np.ndarray:
    """Solve ``Lap u = rhs``, ``du/dnu = g``; the solution has zero disk mean.

    A compatibility defect up to ``COMPAT_HARD`` is projected out of the
    boundary data (with a warning above ``COMPAT_SILENT``).
    """
    rhs = np.zeros(grid.shape) if rhs is None else np.asarray(rhs, dtype=float)
    gh = _bdata(grid, g)
    if check:
        scale = float(grid.integrate(np.abs(rhs)) + 2.0 * np.pi * np.abs(gh[0]) / grid.ntheta)
        _check_compat(neumann_defect(grid, rhs, g), scale)
    rh = grid.to_modes(rhs)
    b = rh.copy()
    b[..., 0] = gh
    b[..., 0, 0] = 0.0
    u = grid.from_modes(grid.apply_radial(grid._neu_inv, b))
    return u - grid.mean(u)[..., None, None]


def inv_div_potential(grid: PolarGrid, w: np.ndarray, check: bool = False) -> np.ndarray:
    """``Delta_nu^{-1} div w``: the mean-free ``g`` with ``Lap g = div w``, ``dg/dnu = <w, nu>``."""
    wn = grid.cos[:, 0] * w[0, :, 0] + grid.sin[:, 0] * w[1, :, 0]
    return solve_laplace_neumann_disk(grid, grid.div(w), wn, check=check)


def grad_inv_div(grid: PolarGrid, w: np.ndarray) -> np.ndarray:
    """Gradient part ``Q w = grad Delta_nu^{-1} div w``."""
    return grid.grad(inv_div_potential(grid, w))


def helmholtz_decompose(grid: PolarGrid, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Split ``X = PX + QX``: divergence-free tangent part and gradient part."""
    QX = grad_inv_div(grid, X)
    return X - QX, QX


def project_P(grid: PolarGrid, X: np.ndarray) -> np.ndarray:
    return X - grad_inv_div(grid, X)


# --- pulled-back operator on the perturbed domain (id + grad f)(disk) -------------


def _inv2(A: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    det = A[0, 0] * A[1, 1] - A[0, 1] * A[1, 0]
    inv = np.array([[A[1, 1], -A[0, 1]], [-A[1, 0], A[0, 0]]]) / det
    return inv, det


@dataclass(frozen=True)
class PulledBackLaplacian:
    """``Delta_eta G = a^{ab} d_ab G + b^a d_a G`` for ``eta = id + grad f``.

    ``Dinv`` is ``(D eta)^{-1}``; ``a = Dinv Dinv^T``.
    """

    grid: PolarGrid
    f: np.ndarray
    Deta: np.ndarray
    Dinv: np.ndarray
    a: np.ndarray
    b: np.ndarray
    min_eig: float

    @classmethod
    def from_potential(cls, grid: PolarGrid, f: np.ndarray, hess: np.ndarray | None = None):
        H = grid.hessian(f) if hess is None else hess
        Deta = H + np.eye(2)[:, :, None, None]
        Dinv, _ = _inv2(Deta)
        a = np.einsum("ik...,jk...->ij...", Dinv, Dinv)
        dM = grid.grad(Dinv)  # dM[b, g, a] = d_a Dinv[b, g]
        b = np.einsum("agxy,bgaxy->bxy", Dinv, dM)
        tr = Deta[0, 0] + Deta[1, 1]
        det = Deta[0, 0] * Deta[1, 1] - Deta[0, 1] * Deta[1, 0]
        min_eig = float(np.min(0.5 * tr - np.sqrt(np.maximum(0.25 * tr**2 - det, 0.0))))
        return cls(grid, f, Deta, Dinv, a, b, min_eig)

    @property
    def positive_definite(self) -> bool:
        return self.min_eig > 0.0

    def perturbation(self, G: np.ndarray) -> np.ndarray:
        """``(Delta_eta - Lap) G``."""
        da = self.a - np.eye(2)[:, :, None, None]
        return np.sum(da * self.grid.hessian(G), axis=(0, 1)) + np.sum(self.b * self.grid.grad(G), axis=0)

    def apply(self, G: np.ndarray) -> np.ndarray:
        return self.grid.laplacian(G) + self.perturbation(G)

    def conormal(self, G: np.ndarray) -> np.ndarray:
        """``<(D eta)^{-T} grad G, N o eta>`` on the boundary samples."""
        dG = self.grid.grad(G)[:, :, 0]
        nu = np.stack([self.grid.cos[:, 0], self.grid.sin[:, 0]])
        Mnu = np.einsum("abx,ax->bx", self.Dinv[:, :, :, 0], nu)
        MdG = np.einsum("abx,bx->ax", self.Dinv[:, :, :, 0], dG)
        return np.sum(MdG * Mnu, axis=0) / np.hypot(Mnu[0], Mnu[1])

    def normal_stretch(self) -> np.ndarray:
        """``|(D eta)^{-T} nu|`` on the boundary samples."""
        nu = np.stack([self.grid.cos[:, 0], self.grid.sin[:, 0]])
        Mnu = np.einsum("abx,ax->bx", self.Dinv[:, :, :, 0], nu)
        return np.hypot(Mnu[0], Mnu[1])


def solve_pulled_back_dirichlet(
    L: PulledBackLaplacian,
    rhs,
    g=0.0,
    tol: float = 1e-11,
    max_iters: int = 200,
) -> np.ndarray:
    """Defect correction with the flat-disk Laplacian as preconditioner."""
    grid = L.grid
    rhs = np.zeros(grid.shape) if rhs is None else np.asarray(rhs, dtype=float)
    if not L.positive_definite:
        raise ConvergenceError(
            f"pulled-back operator not positive definite (min eigenvalue {L.min_eig:.3e})", np.inf
        )
    u = solve_poisson_dirichlet_disk(grid, rhs, g)
    scale = max(1.0, float(np.max(np.abs(u))))
    history = []
    for _ in range(max_iters):
        u_new = solve_poisson_dirichlet_disk(grid, rhs - L.perturbation(u), g)
        step = float(np.max(np.abs(u_new - u)))
        history.append(step)
        u = u_new
        if not np.isfinite(step) or step > 1e8 * scale:
            break
        if step <= tol * scale:
            return u
    raise ConvergenceError(
        f"pulled-back Dirichlet solve did not converge (last update {history[-1]:.3e})",
        history[-1],
        history,
    )


def harmonic_extension_perturbed(L: PulledBackLaplacian, g, **kw) -> np.ndarray:
    """``H_eta(g) = (H(g o eta^{-1})) o eta`` for ``eta = id + grad f``."""
    return solve_pulled_back_dirichlet(L, None, g, **kw)


def solve_pulled_back_neumann(
    L: PulledBackLaplacian,
    rhs,
    g,
    tol: float = 1e-11,
    max_iters: int = 200,
) -> np.ndarray:
    """Solve ``Delta_eta u = rhs`` with normal derivative ``g`` on the perturbed boundary.

    ``g`` is given as samples (or a BoundaryField) at the reference boundary
    nodes; the result is mean-free.
    """
    grid = L.grid
    rhs = np.zeros(grid.shape) if rhs is None else np.asarray(rhs, dtype=float)
    gs = np.fft.irfft(_bdata(grid, g), n=grid.ntheta)
    stretch = L.normal_stretch()
    nu = np.stack([grid.cos[:, 0], grid.sin[:, 0]])
    da = L.a[:, :, :, 0] - np.eye(2)[:, :, None]

    def boundary_data(u):
        du = grid.grad(u)[:, :, 0]
        return gs * stretch - np.einsum("ax,abx,bx->x", nu, da, du)

    u = np.zeros(grid.shape)
    scale = 1.0
    history = []
    for it in range(max_iters):
        u_new = solve_laplace_neumann_disk(grid, rhs - L.perturbation(u), boundary_data(u), check=False)
        step = float(np.max(np.abs(u_new - u)))
        history.append(step)
        u = u_new
        scale = max(1.0, float(np.max(np.abs(u))))
        if not np.isfinite(step) or step > 1e8 * scale:
            break
        if it > 0 and step <= tol * scale:
            return u
    raise ConvergenceError(
        f"pulled-back Neumann solve did not converge (last update {history[-1]:.3e})",
        history[-1],
        history,
    )
