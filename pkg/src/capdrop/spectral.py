"""Spectral representation of fields on the unit disk and on its boundary circle.

Interior fields live on a tensor polar grid: ``ntheta`` equispaced angles times
``nr`` radial nodes, the positive half of an odd-degree Chebyshev grid on
[-1, 1].  A Fourier mode ``e^{i m theta}`` of a smooth function on the disk has
radial profile of parity ``(-1)^m`` in ``r``, so each radial operator is the
full-line Chebyshev operator folded with that parity.  This keeps ``r = 0`` off
the grid and makes every rotation-invariant solve block diagonal in ``m``.

Array conventions:

* scalar field: shape ``(..., ntheta, nr)``; index ``[:, 0]`` is ``r = 1``
* vector field: shape ``(..., 2, ntheta, nr)`` with Cartesian components
* ``grad`` of a vector field ``X`` gives ``DX`` with ``DX[i, j] = d_j X_i``
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

__all__ = [
    "BoundaryField",
    "PolarGrid",
    "PointEvaluator",
    "bd_transform",
    "bd_inverse",
    "bd_derivative",
    "sobolev_norm_boundary",
    "dirichlet_to_neumann_disk",
    "get_grid",
]


def cheb(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Chebyshev differentiation matrix on ``x_j = cos(pi j / n)``."""
    j = np.arange(n + 1)
    x = np.sin(np.pi * (n - 2.0 * j) / (2.0 * n))
    c = np.ones(n + 1)
    c[0] = c[-1] = 2.0
    c *= (-1.0) ** j
    dx = x[:, None] - x[None, :]
    d = np.outer(c, 1.0 / c) / (dx + np.eye(n + 1))
    d -= np.diag(d.sum(axis=1))
    return d, x


def cheb_coeff_matrix(n: int) -> np.ndarray:
    """Matrix mapping values at the ``n + 1`` Chebyshev nodes to T_k coefficients."""
    j = np.arange(n + 1)
    c = np.ones(n + 1)
    c[0] = c[-1] = 2.0
    cos = np.cos(np.pi * np.outer(j, j) / n)
    return (2.0 / n) * cos / c[:, None] / c[None, :]


def cheb_vandermonde(x: np.ndarray, degree: int) -> np.ndarray:
    """T_0..T_degree evaluated at ``x`` (recurrence, valid slightly outside [-1, 1])."""
    t = np.empty((x.size, degree + 1))
    t[:, 0] = 1.0
    if degree > 0:
        t[:, 1] = x
    for k in range(2, degree + 1):
        t[:, k] = 2.0 * x * t[:, k - 1] - t[:, k - 2]
    return t


class PolarGrid:
    """Fourier x folded-Chebyshev collocation grid on the unit disk.

    ``K`` is the highest resolved angular wavenumber; ``ntheta = 2K + 2`` so the
    extra Nyquist mode ``K + 1`` makes the angular transform invertible.
    """

    def __init__(self, K: int = 31, nr: int = 32):
        if K < 1 or nr < 4:
            raise ValueError(f"grid too small: K={K}, nr={nr}")
        self.K = int(K)
        self.nr = int(nr)
        self.ntheta = 2 * self.K + 2
        self.nmodes = self.K + 2
        self.ncheb = 2 * self.nr - 1

        d, x = cheb(self.ncheb)
        self.r = x[: self.nr].copy()
        self.theta = 2.0 * np.pi * np.arange(self.ntheta) / self.ntheta
        self.m = np.arange(self.nmodes)
        self.parity = np.where(self.m % 2 == 0, 1.0, -1.0)

        self.d1 = self._fold(d)
        self.d2 = self._fold(d @ d)
        inv_r = 1.0 / self.r
        m2 = (self.m.astype(float) ** 2)[:, None, None]
        self.lap = self.d2 + inv_r[None, :, None] * self.d1 - m2 * np.diag(inv_r**2)[None]

        self._dir_inv = np.linalg.inv(self.lap[:, 1:, 1:])
        neu = self.lap.copy()
        neu[:, 0, :] = self.d1[:, 0, :]
        # mode 0 of a Neumann problem is solved as a Dirichlet problem; its
        # gradient is the same whenever the data are compatible
        neu[0] = self.lap[0]
        neu[0, 0, :] = 0.0
        neu[0, 0, 0] = 1.0
        self._neu_inv = np.linalg.inv(neu)

        coeff = cheb_coeff_matrix(self.ncheb)
        flipped = coeff[:, ::-1][:, : self.nr]
        self._cheb_even = coeff[:, : self.nr] + flipped
        self._cheb_odd = coeff[:, : self.nr] - flipped

        # radial weights for int_0^1 g(r) r dr, exact for even polynomials of the grid degree
        xg, wg = np.polynomial.legendre.leggauss(2 * self.ncheb)
        rg = 0.5 * (xg + 1.0)
        mu = (0.5 * wg * rg) @ cheb_vandermonde(rg, self.ncheb)
        self.radial_weights = mu @ self._cheb_even
        self.weights = (2.0 * np.pi / self.ntheta) * np.broadcast_to(
            self.radial_weights, (self.ntheta, self.nr)
        )

        self.cos = np.cos(self.theta)[:, None]
        self.sin = np.sin(self.theta)[:, None]
        rr = np.broadcast_to(self.r, (self.ntheta, self.nr))
        self.x = rr * self.cos
        self.y = rr * self.sin
        self.position = np.stack([self.x, self.y])

    def _fold(self, a: np.ndarray) -> np.ndarray:
        n = self.nr
        pos = a[:n, :n]
        neg = a[:n, ::-1][:, :n]
        return pos[None] + self.parity[:, None, None] * neg[None]

    def __repr__(self) -> str:
        return f"PolarGrid(K={self.K}, nr={self.nr})"

    @property
    def shape(self) -> tuple[int, int]:
        return (self.ntheta, self.nr)

    # --- transforms -----------------------------------------------------
    def to_modes(self, g: np.ndarray) -> np.ndarray:
        return np.fft.rfft(g, axis=-2)

    def from_modes(self, gh: np.ndarray) -> np.ndarray:
        return np.fft.irfft(gh, n=self.ntheta, axis=-2)

    def apply_radial(self, mats: np.ndarray, gh: np.ndarray) -> np.ndarray:
        return np.matmul(mats, gh[..., None])[..., 0]

    # --- differentiation ------------------------------------------------
    def dr(self, g: np.ndarray) -> np.ndarray:
        return self.from_modes(self.apply_radial(self.d1, self.to_modes(g)))

    def dtheta(self, g: np.ndarray) -> np.ndarray:
        gh = self.to_modes(g) * (1j * self.m)[:, None]
        gh[..., -1, :] = 0.0
        return self.from_modes(gh)

    def grad(self, g: np.ndarray) -> np.ndarray:
        """Cartesian gradient; a new axis of length 2 is inserted before the grid axes."""
        gh = self.to_modes(g)
        gr = self.from_modes(self.apply_radial(self.d1, gh))
        ght = gh * (1j * self.m)[:, None]
        ght[..., -1, :] = 0.0
        gt = self.from_modes(ght) / self.r
        return np.stack([self.cos * gr - self.sin * gt, self.sin * gr + self.cos * gt], axis=-3)

    def div(self, X: np.ndarray) -> np.ndarray:
        D = self.grad(X)
        return D[..., 0, 0, :, :] + D[..., 1, 1, :, :]

    def curl(self, X: np.ndarray) -> np.ndarray:
        D = self.grad(X)
        return D[..., 1, 0, :, :] - D[..., 0, 1, :, :]

    def hessian(self, g: np.ndarray) -> np.ndarray:
        """``H[i, j] = d_i d_j g``, symmetrised."""
        H = self.grad(self.grad(g))
        return 0.5 * (H + np.swapaxes(H, -3, -4))

    def laplacian(self, g: np.ndarray) -> np.ndarray:
        return self.from_modes(self.apply_radial(self.lap, self.to_modes(g)))

    # --- products and quadrature ---------------------------------------
    def mul(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """Product evaluated on a 3/2-padded angular grid, truncated back to K modes."""
        a, b = np.broadcast_arrays(a, b)
        n = self.ntheta
        npad = 3 * n // 2
        pad = [(0, 0)] * a.ndim
        pad[-2] = (0, npad // 2 + 1 - self.nmodes)

        def up(g):
            gh = np.fft.rfft(g, axis=-2)
            gh[..., -1, :] = 0.0
            return np.fft.irfft(np.pad(gh, pad), n=npad, axis=-2) * (npad / n)

        ph = np.fft.rfft(up(a) * up(b), axis=-2)[..., : self.nmodes, :] * (n / npad)
        ph[..., -1, :] = 0.0
        return np.fft.irfft(ph, n=n, axis=-2)

    def integrate(self, g: np.ndarray) -> np.ndarray:
        return np.sum(g * self.weights, axis=(-2, -1))

    def inner(self, X: np.ndarray, Y: np.ndarray) -> float:
        """L2 inner product of two scalar or vector fields (all leading axes summed)."""
        return float(np.sum(self.integrate(X * Y)))

    def l2_norm(self, X: np.ndarray) -> float:
        return float(np.sqrt(max(self.inner(X, X), 0.0)))

    def mean(self, g: np.ndarray) -> np.ndarray:
        return self.integrate(g) / np.pi

    def cheb_modes(self, g: np.ndarray) -> np.ndarray:
        """Coefficients ``a[..., m, n]`` of ``g = sum_m,n a T_n(r) e^{i m theta}`` (rfft convention)."""
        gh = self.to_modes(g) / self.ntheta
        out = np.empty(gh.shape[:-1] + (self.ncheb + 1,), dtype=complex)
        even = self.m % 2 == 0
        out[..., even, :] = gh[..., even, :] @ self._cheb_even.T
        out[..., ~even, :] = gh[..., ~even, :] @ self._cheb_odd.T
        return out

    def sobolev_norm(self, g: np.ndarray, s: float = 1.0) -> float:
        """Weighted coefficient norm used as the discrete stand-in for H^s(disk)."""
        a = self.cheb_modes(g)
        w = np.where((self.m == 0) | (self.m == self.nmodes - 1), 1.0, 2.0)
        n = np.arange(self.ncheb + 1)
        weight = (1.0 + self.m[:, None] ** 2 + n[None, :] ** 2) ** s * w[:, None]
        val = np.sum(weight * np.abs(a) ** 2, axis=(-2, -1))
        if val.ndim:
            val = val.sum()
        return float(np.sqrt(val))

    # --- boundary -------------------------------------------------------
    def restrict(self, g: np.ndarray) -> np.ndarray:
        return g[..., :, 0]

    def boundary_modes(self, g: np.ndarray) -> np.ndarray:
        """Normalised rfft coefficients of the trace at r = 1."""
        return np.fft.rfft(g[..., :, 0], axis=-1) / self.ntheta


@lru_cache(maxsize=8)
def get_grid(K: int = 31, nr: int = 32) -> PolarGrid:
    """Shared read-only grid per resolution."""
    return PolarGrid(K, nr)


class PointEvaluator:
    """Evaluates grid fields at fixed scattered points by spectral interpolation."""

    def __init__(self, grid: PolarGrid, points: np.ndarray):
        pts = np.asarray(points, dtype=float)
        self.grid = grid
        self.shape = pts.shape[1:]
        px = pts[0].ravel()
        py = pts[1].ravel()
        rad = np.hypot(px, py)
        ang = np.arctan2(py, px)
        self._tn = cheb_vandermonde(rad, grid.ncheb)
        w = np.where((grid.m == 0) | (grid.m == grid.nmodes - 1), 1.0, 2.0)
        self._phase = w[None, :] * np.exp(1j * np.outer(ang, grid.m))

    def __call__(self, g: np.ndarray) -> np.ndarray:
        a = self.grid.cheb_modes(g)
        b = a @ self._tn.T
        vals = np.real(np.sum(np.swapaxes(b, -1, -2) * self._phase, axis=-1))
        return vals.reshape(g.shape[:-2] + self.shape)


# --- boundary fields ------------------------------------------------------------


@dataclass(frozen=True)
class BoundaryField:
    """Real function on the unit circle stored by its Fourier coefficients.

    ``coeffs[k]`` is ``c_k`` for ``k = 0..K+1`` (``c_{-k} = conj(c_k)``); the last
    entry is the Nyquist coefficient of the ``2K + 2`` point angular grid.
    """

    coeffs: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=complex)
        if c.ndim != 1 or c.size < 3:
            raise ValueError("BoundaryField needs a 1-d coefficient array of length >= 3")
        c = c.copy()
        c[0] = c[0].real
        c[-1] = c[-1].real
        c.flags.writeable = False
        object.__setattr__(self, "coeffs", c)

    @property
    def K(self) -> int:
        return self.coeffs.size - 2

    @property
    def ntheta(self) -> int:
        return 2 * self.coeffs.size - 2

    @classmethod
    def zeros(cls, K: int) -> "BoundaryField":
        return cls(np.zeros(K + 2, dtype=complex))

    @classmethod
    def from_samples(cls, samples: np.ndarray) -> "BoundaryField":
        samples = np.asarray(samples, dtype=float)
        n = samples.size
        if n < 4 or n % 2:
            raise ValueError(f"need an even number >= 4 of samples, got {n}")
        return cls(np.fft.rfft(samples) / n)

    @classmethod
    def from_modes(cls, K: int, modes: dict[int, complex]) -> "BoundaryField":
        """Field from ``{k: c_k}``; negative k are folded to their conjugates."""
        c = np.zeros(K + 2, dtype=complex)
        for k, v in modes.items():
            if abs(k) > K + 1:
                raise ValueError(f"mode {k} outside resolution K={K}")
            if k >= 0:
                c[k] += v
            else:
                c[-k] += np.conj(v)
        return cls(c)

    def samples(self) -> np.ndarray:
        return np.fft.irfft(self.coeffs * self.ntheta, n=self.ntheta)

    def coeff(self, k: int) -> complex:
        c = self.coeffs[abs(k)]
        return complex(np.conj(c)) if k < 0 else complex(c)

    def two_sided(self) -> np.ndarray:
        """``c_k`` for ``k = -K..K`` (Nyquist omitted)."""
        c = self.coeffs[: self.K + 1]
        return np.concatenate([np.conj(c[:0:-1]), c])

    def mean_free(self) -> "BoundaryField":
        c = self.coeffs.copy()
        c[0] = 0.0
        return BoundaryField(c)

    @property
    def is_mean_free(self) -> bool:
        return self.coeffs[0] == 0.0

    def __add__(self, other: "BoundaryField") -> "BoundaryField":
        return BoundaryField(self.coeffs + other.coeffs)

    def __sub__(self, other: "BoundaryField") -> "BoundaryField":
        return BoundaryField(self.coeffs - other.coeffs)

    def __mul__(self, a: float) -> "BoundaryField":
        return BoundaryField(self.coeffs * a)

    __rmul__ = __mul__

    def __neg__(self) -> "BoundaryField":
        return BoundaryField(-self.coeffs)


def bd_transform(samples: np.ndarray, ntheta: int | None = None) -> BoundaryField:
    samples = np.asarray(samples, dtype=float)
    if ntheta is not None and samples.size != ntheta:
        raise ValueError(f"expected {ntheta} samples, got {samples.size}")
    return BoundaryField.from_samples(samples)


def bd_inverse(f: BoundaryField) -> np.ndarray:
    return f.samples()


def _wavenumbers(f: BoundaryField) -> np.ndarray:
    return np.arange(f.coeffs.size)


def bd_derivative(f: BoundaryField, order: int = 1) -> BoundaryField:
    if order < 0 or order > 4:
        raise ValueError(f"derivative order must be in 0..4, got {order}")
    k = _wavenumbers(f)
    c = f.coeffs * (1j * k) ** order
    if order % 2:
        c[-1] = 0.0
    return BoundaryField(c)


def parseval_weights(n: int) -> np.ndarray:
    w = np.full(n, 2.0)
    w[0] = 1.0
    w[-1] = 1.0
    return w


def sobolev_norm_boundary(f: BoundaryField, s: float = 0.0) -> float:
    """``(sum_k (1 + k^2)^s |c_k|^2)^(1/2)`` over all k."""
    k = _wavenumbers(f)
    w = parseval_weights(k.size)
    return float(np.sqrt(np.sum(w * (1.0 + k**2) ** s * np.abs(f.coeffs) ** 2)))


def dirichlet_to_neumann_disk(h: BoundaryField) -> BoundaryField:
    return BoundaryField(h.coeffs * _wavenumbers(h))
