import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from capdrop.elliptic import (
    CompatibilityError,
    ConvergenceError,
    PulledBackLaplacian,
    harmonic_extension_perturbed,
    helmholtz_decompose,
    inv_div_potential,
    neumann_defect,
    project_P,
    solve_laplace_dirichlet_disk,
    solve_laplace_neumann_disk,
    solve_poisson_dirichlet_disk,
    solve_pulled_back_dirichlet,
    solve_pulled_back_neumann,
)
from capdrop.geometry import volume_extension
from capdrop.spectral import BoundaryField, get_grid

from .conftest import smooth_vector_field


def test_poisson_exact(grid):
    r2 = grid.x**2 + grid.y**2
    u = solve_poisson_dirichlet_disk(grid, -np.ones(grid.shape))
    np.testing.assert_allclose(u, (1 - r2) / 4, atol=1e-13)


def test_laplace_mode_extends_as_power(grid):
    g = BoundaryField.from_modes(grid.K, {3: 0.5})
    u = solve_laplace_dirichlet_disk(grid, g)
    np.testing.assert_allclose(u, grid.x**3 - 3 * grid.x * grid.y**2, atol=1e-13)


def test_neumann_exact_and_mean_free(grid):
    # u = x^2 - y^2 + x: harmonic, du/dnu = 2 cos 2t + cos t
    th = grid.theta
    u = solve_laplace_neumann_disk(grid, None, 2 * np.cos(2 * th) + np.cos(th))
    np.testing.assert_allclose(u, grid.x**2 - grid.y**2 + grid.x, atol=1e-12)
    assert abs(grid.integrate(u)) < 1e-13


def test_neumann_incompatible_rejected(grid):
    with pytest.raises(CompatibilityError):
        solve_laplace_neumann_disk(grid, np.ones(grid.shape), 0.0)
    assert neumann_defect(grid, np.ones(grid.shape), 0.5) == pytest.approx(0.0, abs=1e-13)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_projection_identities(seed):
    grid = get_grid(15, 16)
    rng = np.random.default_rng(seed)
    X = smooth_vector_field(grid, rng, degree=5)
    P, Q = helmholtz_decompose(grid, X)
    scale = grid.l2_norm(X)
    assert grid.l2_norm(P + Q - X) <= 1e-9 * scale
    assert abs(grid.inner(P, Q)) <= 1e-9 * scale**2
    np.testing.assert_allclose(Q, grid.grad(inv_div_potential(grid, X)), atol=1e-12)
    assert np.max(np.abs(grid.div(P))) <= 1e-8 * scale
    flux = grid.cos[:, 0] * P[0, :, 0] + grid.sin[:, 0] * P[1, :, 0]
    assert np.max(np.abs(flux)) <= 1e-9 * scale
    np.testing.assert_allclose(project_P(grid, P), P, atol=1e-9 * scale)


def _eta(grid, amp=0.01):
    h = BoundaryField.from_modes(grid.K, {2: amp, 3: 0.5j * amp})
    vp = volume_extension(h, grid=grid)
    L = PulledBackLaplacian.from_potential(grid, vp.f)
    return L, vp.flow_map().positions


def test_pulled_back_dirichlet_oracle(grid):
    # U o eta with U = x^2 + y^2 solves Delta_eta u = 4 with its own trace
    L, eta = _eta(grid)
    u = eta[0] ** 2 + eta[1] ** 2
    v = solve_pulled_back_dirichlet(L, 4.0 * np.ones(grid.shape), u[:, 0])
    np.testing.assert_allclose(v, u, atol=1e-10)
    w = eta[0] ** 2 - eta[1] ** 2
    np.testing.assert_allclose(harmonic_extension_perturbed(L, w[:, 0]), w, atol=1e-10)


def test_pulled_back_identity_is_flat(grid):
    L = PulledBackLaplacian.from_potential(grid, np.zeros(grid.shape))
    g = grid.x**3 * grid.y
    np.testing.assert_allclose(L.apply(g), grid.laplacian(g), atol=1e-12)
    np.testing.assert_allclose(L.normal_stretch(), 1.0, atol=1e-14)


def test_pulled_back_neumann_oracle(grid):
    L, eta = _eta(grid)
    X, Y = eta
    u = X**2 - Y**2 + X * Y
    gradU = np.stack([2 * X + Y, -2 * Y + X])[:, :, 0]
    nu = np.stack([grid.cos[:, 0], grid.sin[:, 0]])
    N = np.einsum("abx,ax->bx", L.Dinv[:, :, :, 0], nu)
    N /= np.hypot(*N)
    g = np.sum(gradU * N, axis=0)
    np.testing.assert_allclose(L.conormal(u), g, atol=1e-10)
    v = solve_pulled_back_neumann(L, None, g)
    u0 = u - grid.integrate(u) / np.pi
    np.testing.assert_allclose(v, u0, atol=1e-9)


def test_degenerate_map_rejected(grid):
    f = 0.6 * (grid.x**2 - grid.y**2)
    L = PulledBackLaplacian.from_potential(grid, f)
    with pytest.raises(ConvergenceError):
        solve_pulled_back_dirichlet(L, None, 0.0)
