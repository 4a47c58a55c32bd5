import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from capdrop.spectral import (
    BoundaryField,
    PointEvaluator,
    bd_derivative,
    bd_inverse,
    bd_transform,
    dirichlet_to_neumann_disk,
    get_grid,
    parseval_weights,
    sobolev_norm_boundary,
)


def test_grid_layout(grid):
    assert grid.ntheta == 2 * grid.K + 2
    assert grid.shape == (grid.ntheta, grid.nr)
    np.testing.assert_allclose(grid.r[0], 1.0)
    assert get_grid(31, 32) is grid


def test_polynomial_derivatives(grid):
    x, y = grid.x, grid.y
    g = x**3 * y - 2 * x * y**2 + y**4
    gx = 3 * x**2 * y - 2 * y**2
    gy = x**3 - 4 * x * y + 4 * y**3
    np.testing.assert_allclose(grid.grad(g), np.stack([gx, gy]), atol=1e-11)
    np.testing.assert_allclose(grid.laplacian(g), 6 * x * y - 4 * x + 12 * y**2, atol=1e-10)
    H = grid.hessian(g)
    np.testing.assert_allclose(H[0, 1], H[1, 0], atol=1e-10)
    np.testing.assert_allclose(H[0, 1], 3 * x**2 - 4 * y, atol=1e-10)


def test_div_curl(grid):
    X = np.stack([-grid.y, grid.x])
    np.testing.assert_allclose(grid.div(X), 0.0, atol=1e-12)
    np.testing.assert_allclose(grid.curl(X), 2.0, atol=1e-12)


def test_integration(grid):
    r2 = grid.x**2 + grid.y**2
    np.testing.assert_allclose(grid.integrate(np.ones(grid.shape)), np.pi, rtol=1e-13)
    np.testing.assert_allclose(grid.integrate(r2**3), np.pi / 4, rtol=1e-13)
    np.testing.assert_allclose(grid.integrate(grid.x**2), np.pi / 4, rtol=1e-13)


def test_dealiased_product_matches_pointwise_for_low_modes(grid):
    a = grid.x**2 + grid.y
    b = grid.x * grid.y
    np.testing.assert_allclose(grid.mul(a, b), a * b, atol=1e-12)


def test_point_evaluator_exact_on_polynomials(grid, rng):
    pts = rng.uniform(-0.7, 0.7, size=(2, 50))
    g = grid.x**4 - 3 * grid.x * grid.y**2 + 0.5
    ev = PointEvaluator(grid, pts)
    px, py = pts
    np.testing.assert_allclose(ev(g), px**4 - 3 * px * py**2 + 0.5, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-1, 1), min_size=8, max_size=8))
def test_boundary_roundtrip(vals):
    K = 7
    c = np.zeros(K + 2, dtype=complex)
    c[: len(vals) // 2] = np.array(vals[::2]) + 1j * np.array(vals[1::2])
    c[0] = c[0].real
    f = BoundaryField(c)
    g = bd_transform(bd_inverse(f))
    np.testing.assert_allclose(g.coeffs, f.coeffs, atol=1e-14)


def test_boundary_derivative_and_norms():
    K = 15
    th = 2 * np.pi * np.arange(2 * K + 2) / (2 * K + 2)
    f = BoundaryField.from_samples(np.cos(3 * th) + 0.5 * np.sin(5 * th))
    np.testing.assert_allclose(bd_derivative(f).samples(), -3 * np.sin(3 * th) + 2.5 * np.cos(5 * th), atol=1e-12)
    np.testing.assert_allclose(bd_derivative(f, 2).samples(), -9 * np.cos(3 * th) - 12.5 * np.sin(5 * th), atol=1e-11)
    # normalised L2: (1/2pi) int |f|^2 = (1 + 1/4) / 2
    np.testing.assert_allclose(sobolev_norm_boundary(f, 0.0) ** 2, 0.625, rtol=1e-12)
    # H^1 weights (1 + k^2)
    np.testing.assert_allclose(sobolev_norm_boundary(f, 1.0) ** 2, (10 + 26 / 4) / 2, rtol=1e-12)
    assert parseval_weights(K + 2)[0] == 1.0


def test_dirichlet_to_neumann_symbol():
    K = 15
    f = BoundaryField.from_modes(K, {4: 1.0, 1: 0.25j})
    g = dirichlet_to_neumann_disk(f)
    assert g.coeff(4) == pytest.approx(4.0)
    assert g.coeff(1) == pytest.approx(0.25j)


def test_mean_free():
    f = BoundaryField.from_modes(7, {0: 2.0, 2: 1.0})
    assert not f.is_mean_free
    assert f.mean_free().is_mean_free
