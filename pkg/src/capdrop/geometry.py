"""Boundary curvature, the volume-preserving extension ``h -> f`` and the
linearised curvature symbol of the map ``id + grad f``."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .elliptic import ConvergenceError, solve_laplace_dirichlet_disk, solve_poisson_dirichlet_disk
from .spectral import BoundaryField, PointEvaluator, PolarGrid, bd_derivative, get_grid, sobolev_norm_boundary

DELTA0 = 0.05
SOBOLEV_S = 4.0


class DegenerateCurveError(ValueError):
    """The parameterisation has (numerically) vanishing speed somewhere."""


class SymbolExtrapolationError(RuntimeError):
    """The two finite-difference probes of a symbol entry disagree."""


# --- flow maps ------------------------------------------------------------------


@dataclass(frozen=True)
class FlowMap:
    """A map of the disk into the plane, stored as its displacement from the identity."""

    grid: PolarGrid
    displacement: np.ndarray
    volume_preserving: bool = False
    boundary_preserving: bool = False

    @classmethod
    def identity(cls, grid: PolarGrid) -> "FlowMap":
        return cls(grid, np.zeros((2,) + grid.shape), True, True)

    @classmethod
    def from_positions(cls, grid: PolarGrid, pos: np.ndarray, **flags) -> "FlowMap":
        return cls(grid, np.asarray(pos) - grid.position, **flags)

    @property
    def positions(self) -> np.ndarray:
        return self.grid.position + self.displacement

    def jacobian(self) -> np.ndarray:
        return jacobian(self)

    def boundary_curve(self) -> np.ndarray:
        """Image of the unit circle, shape ``(2, ntheta)``."""
        return self.positions[:, :, 0]

    def radial_defect(self) -> float:
        """``max | |m(x)| - 1 |`` over boundary nodes."""
        return float(np.max(np.abs(np.hypot(*self.boundary_curve()) - 1.0)))

    def displacement_defect(self, other: "FlowMap") -> float:
        """``max |m(x) - other(x)|`` over the grid."""
        return float(np.max(np.abs(self.positions - other.positions)))

    def volume_defect(self) -> float:
        return float(np.max(np.abs(self.jacobian() - 1.0)))


def jacobian(m) -> np.ndarray:
    """Pointwise ``det Dm``."""
    D = m.grid.grad(m.displacement) + np.eye(2)[:, :, None, None]
    return D[0, 0] * D[1, 1] - D[0, 1] * D[1, 0]


# --- curvature ------------------------------------------------------------------


def curvature_of_curve(curve: np.ndarray) -> BoundaryField:
    """Signed curvature ``(r' x r'') / |r'|^3`` of a closed curve sampled at equispaced theta."""
    curve = np.asarray(curve, dtype=float)
    fx = BoundaryField.from_samples(curve[0])
    fy = BoundaryField.from_samples(curve[1])
    x1, y1 = bd_derivative(fx, 1).samples(), bd_derivative(fy, 1).samples()
    x2, y2 = bd_derivative(fx, 2).samples(), bd_derivative(fy, 2).samples()
    speed = np.hypot(x1, y1)
    if np.min(speed) < 1e-8:
        raise DegenerateCurveError(f"curve speed {np.min(speed):.3e} below 1e-8")
    return BoundaryField.from_samples((x1 * y2 - y1 * x2) / speed**3)


def curve_length(curve: np.ndarray) -> float:
    """Arclength by the spectrally exact trapezoid rule on ``|r'|``."""
    x1 = bd_derivative(BoundaryField.from_samples(curve[0]), 1).samples()
    y1 = bd_derivative(BoundaryField.from_samples(curve[1]), 1).samples()
    return float(np.mean(np.hypot(x1, y1)) * 2.0 * np.pi)


# --- volume-preserving extension ------------------------------------------------


def psi_cutoff(x: float, delta0: float = DELTA0) -> float:
    """Quintic step: 1 on ``x <= delta0/3``, 0 on ``x >= 2 delta0/3``, monotone between."""
    t = min(max((x - delta0 / 3.0) / (delta0 / 3.0), 0.0), 1.0)
    return 1.0 - t**3 * (10.0 - 15.0 * t + 6.0 * t**2)


def _hess_terms(grid: PolarGrid, f: np.ndarray):
    H = grid.hessian(f)
    det = H[0, 0] * H[1, 1] - H[0, 1] ** 2
    return H, det


def _cof_contract(H: np.ndarray, G: np.ndarray) -> np.ndarray:
    """``cof(H) : G`` for symmetric 2x2 fields."""
    return H[1, 1] * G[0, 0] + H[0, 0] * G[1, 1] - 2.0 * H[0, 1] * G[0, 1]


@dataclass(frozen=True)
class VolumePotential:
    """``f`` with ``J(id + grad f) = 1`` in the disk and ``f = h`` on the circle."""

    grid: PolarGrid
    f: np.ndarray
    h: BoundaryField
    amplitude: float
    delta0: float = DELTA0
    s: float = SOBOLEV_S
    cutoff: float = 1.0
    residual: float = 0.0
    history: tuple = field(default=(), compare=False)

    @property
    def admissible(self) -> bool:
        return self.amplitude < self.delta0

    @property
    def hessian(self) -> np.ndarray:
        return self.grid.hessian(self.f)

    def flow_map(self) -> FlowMap:
        return FlowMap(self.grid, self.grid.grad(self.f), volume_preserving=True)

    def jacobian(self) -> np.ndarray:
        return jacobian(self.flow_map())


def volume_extension(
    h: BoundaryField,
    use_cutoff: bool = False,
    grid: PolarGrid | None = None,
    nr: int = 32,
    s: float = SOBOLEV_S,
    delta0: float = DELTA0,
    tol: float = 1e-11,
    max_iter: int = 25,
    guess: np.ndarray | None = None,
) -> VolumePotential:
    """Solve ``Lap f + psi * det D^2 f = 0``, ``f = h`` on the circle, by Newton's method.

    ``psi = 1`` unless ``use_cutoff`` is set, in which case it is the quintic
    cutoff of ``||h||_{s+2}^2``.  Each Newton correction is solved by defect
    correction against the flat Laplacian.  The residual is the max-norm of
    ``det(I + D^2 f) - 1`` at the grid nodes; iteration stops at ``tol`` or
    when the residual stalls below 1e-9 (the round-off floor of ``D^2 f``).
    """
    grid = grid or get_grid(h.K, nr)
    if grid.nmodes != h.coeffs.size:
        raise ValueError(f"boundary field K={h.K} does not match grid K={grid.K}")
    amp = sobolev_norm_boundary(h, s + 2.0)
    psi = psi_cutoff(amp**2, delta0) if use_cutoff else 1.0

    if not np.any(h.coeffs[1:]):
        f = np.full(grid.shape, h.coeffs[0].real)
        return VolumePotential(grid, f, h, amp, delta0, s, psi)

    if guess is None:
        f = solve_laplace_dirichlet_disk(grid, h)
    else:
        # keep the guess interior but impose the current trace exactly
        f = guess + solve_laplace_dirichlet_disk(grid, h.samples() - guess[:, 0])
    if psi == 0.0:
        return VolumePotential(grid, f, h, amp, delta0, s, psi)

    damp = 0.5 if amp > 0.9 * delta0 else 1.0
    history = []
    for it in range(max_iter + 1):
        H, det = _hess_terms(grid, f)
        F = H[0, 0] + H[1, 1] + psi * det
        res = float(np.max(np.abs(F)))
        history.append(res)
        if not np.isfinite(res):
            break
        # below 1e-9 a stalled residual is the round-off floor of D^2
        stalled = len(history) > 1 and res <= 1e-9 and res > 0.25 * history[-2]
        if res <= tol or stalled:
            return VolumePotential(grid, f, h, amp, delta0, s, psi, res, tuple(history))
        if it == max_iter:
            break
        # inner solve of (Lap + psi cof(H):D^2) d = -F with d = 0 on the circle
        d = solve_poisson_dirichlet_disk(grid, -F)
        for _ in range(60):
            d_new = solve_poisson_dirichlet_disk(grid, -F - psi * _cof_contract(H, grid.hessian(d)))
            step = float(np.max(np.abs(d_new - d)))
            d = d_new
            if step <= max(1e-3 * tol, min(1e-2, res) * float(np.max(np.abs(d)))):
                break
        f = f + (damp if it == 0 else 1.0) * d
    raise ConvergenceError(
        f"volume extension Newton did not converge (residual {history[-1]:.3e})", history[-1], history
    )


def harmonic_potential(h: BoundaryField, grid: PolarGrid | None = None) -> np.ndarray:
    grid = grid or get_grid(h.K)
    return solve_laplace_dirichlet_disk(grid, h)


def displaced_boundary(vp: VolumePotential) -> np.ndarray:
    """Samples of ``theta -> (id + grad f)(cos theta, sin theta)``."""
    grid = vp.grid
    g = grid.grad(vp.f)[:, :, 0]
    return np.stack([grid.cos[:, 0] + g[0], grid.sin[:, 0] + g[1]])


def curvature_composed(vp: VolumePotential) -> BoundaryField:
    """Curvature of ``(id + grad f)(circle)`` composed with ``id + grad f``."""
    return curvature_of_curve(displaced_boundary(vp))


# --- linearised curvature symbol ----------------------------------------------


@dataclass(frozen=True)
class CurvatureSymbol:
    """``ell[k]`` for ``k = 0..K``: response of the composed curvature to ``f = e^{ik theta}`` on the circle."""

    ell: np.ndarray
    spread: np.ndarray

    @property
    def K(self) -> int:
        return self.ell.size - 1

    def __call__(self, k) -> np.ndarray:
        return self.ell[np.abs(np.asarray(k))]

    def apply(self, h: BoundaryField) -> BoundaryField:
        c = np.zeros_like(h.coeffs)
        n = min(h.coeffs.size - 1, self.ell.size)
        c[:n] = h.coeffs[:n] * self.ell[:n]
        return BoundaryField(c)

    def table(self) -> list[tuple[int, float]]:
        return [(k, float(v)) for k, v in enumerate(self.ell)]


def _probe(grid: PolarGrid, k: int, eps: float) -> float:
    # amplitudes are measured in H^2 so every mode is probed equally deep into its nonlinearity
    eps = eps / (1.0 + k * k)

    def response(a: float) -> float:
        h = BoundaryField.from_modes(grid.K, {k: 0.5 * a})
        c = curvature_composed(volume_extension(h, grid=grid))
        return 2.0 * c.coeffs[k].real

    return (response(eps) - response(-eps)) / (2.0 * eps)


def _symbol_entry(grid: PolarGrid, k: int, eps: float, rtol: float) -> tuple[float, float]:
    if k == 0:
        return 0.0, 0.0
    d1 = _probe(grid, k, eps)
    d2 = _probe(grid, k, 2.0 * eps)
    ell = (4.0 * d1 - d2) / 3.0
    spread = abs(d1 - d2) / max(abs(ell), 1.0)
    if spread > rtol:
        raise SymbolExtrapolationError(f"symbol at k={k}: probes differ by {spread:.3e} (relative)")
    return ell, spread


def linearized_curvature_symbol(
    K: int = 31,
    nr: int = 32,
    eps: float = 1e-5,
    rtol: float = 1e-4,
    workers: int = 1,
) -> CurvatureSymbol:
    """Finite-difference probes at ``eps`` and ``2 eps`` combined by Richardson extrapolation."""
    grid = get_grid(K, nr)
    ks = range(K + 1)
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            out = list(pool.map(lambda k: _symbol_entry(grid, k, eps, rtol), ks))
    else:
        out = [_symbol_entry(grid, k, eps, rtol) for k in ks]
    ell = np.array([o[0] for o in out])
    spread = np.array([o[1] for o in out])
    return CurvatureSymbol(ell, spread)


def extension_derivative(
    vp: VolumePotential, hdot: BoundaryField, tol: float = 1e-13, max_iter: int = 100
) -> np.ndarray:
    """Derivative of the extension along ``hdot``.

    Differentiating ``det(I + D^2 f) = 1`` gives ``Lap g + psi cof(D^2 f) : D^2 g = 0``
    with ``g = hdot`` on the circle.
    """
    grid = vp.grid
    g = solve_laplace_dirichlet_disk(grid, hdot)
    if vp.cutoff == 0.0 or not np.any(vp.f - vp.f.flat[0]):
        return g
    H = vp.hessian
    scale = max(float(np.max(np.abs(g))), 1e-300)
    for _ in range(max_iter):
        g_new = solve_poisson_dirichlet_disk(grid, -vp.cutoff * _cof_contract(H, grid.hessian(g)), hdot)
        step = float(np.max(np.abs(g_new - g)))
        g = g_new
        if step <= tol * scale:
            return g
    raise ConvergenceError(f"extension derivative did not converge (last update {step:.3e})", step)


# Chebyshev extrapolation is only trusted in a thin shell outside the unit circle
_MAX_RADIUS = 1.02


def _clamp(y: np.ndarray) -> np.ndarray:
    r = np.hypot(y[0], y[1])
    return y * np.minimum(1.0, _MAX_RADIUS / np.maximum(r, 1e-300))


def invert_map(
    grid: PolarGrid,
    displacement: np.ndarray,
    targets: np.ndarray,
    guess: np.ndarray | None = None,
    tol: float = 1e-13,
    max_iter: int = 30,
) -> np.ndarray:
    """Solve ``y + d(y) = target`` pointwise by Newton's method (``d`` a grid vector field)."""
    targets = np.asarray(targets, dtype=float)
    if guess is None:
        y = _clamp(targets - PointEvaluator(grid, _clamp(targets))(displacement))
    else:
        y = np.array(guess, dtype=float)
    Dd = grid.grad(displacement)
    fields = np.concatenate([displacement, Dd.reshape((4,) + grid.shape)])
    for _ in range(max_iter):
        vals = PointEvaluator(grid, y)(fields)
        res = y + vals[:2] - targets
        err = float(np.max(np.abs(res)))
        if err <= tol:
            return y
        if not np.isfinite(err) or err > 10.0:
            break
        a, b, c, d = 1.0 + vals[2], vals[3], vals[4], 1.0 + vals[5]
        det = a * d - b * c
        y = _clamp(y - np.stack([d * res[0] - b * res[1], -c * res[0] + a * res[1]]) / det)
    raise ConvergenceError(f"map inversion did not converge (residual {err:.3e})", err)
