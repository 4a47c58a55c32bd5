import numpy as np
import pytest

from capdrop.boundary import (
    BlowUpError,
    BoundaryState,
    DynamicsContext,
    PicardError,
    RegimeError,
    apply_L1_inverse,
    assemble_rhs,
    build_sqrt_operator,
    default_dt,
    lawson_trapezoid,
    rotate,
    solve_f_interval,
    step_boundary_state,
)
from capdrop.geometry import CurvatureSymbol
from capdrop.harness import measure_frequency
from capdrop.lagrangian import curvature_symbol
from capdrop.spectral import BoundaryField, sobolev_norm_boundary
from capdrop.verify import exact_symbol

KAPPA = 400.0


@pytest.fixture(scope="module")
def symbol():
    return curvature_symbol(31, 32)


def test_sqrt_operator_squares_to_symbol(symbol):
    S = build_sqrt_operator(KAPPA, symbol)
    h = BoundaryField.from_modes(31, {2: 1.0, 5: 0.3j, 1: 0.7})
    SSh = S.apply(S.apply(h))
    np.testing.assert_allclose(SSh.coeffs[2:32], symbol.apply(h).coeffs[2:32], rtol=1e-12)
    assert SSh.coeff(1) == 0
    np.testing.assert_allclose(S.inverse(S.apply(h)).coeffs[2:32], h.coeffs[2:32], rtol=1e-12)
    np.testing.assert_allclose(S.omega[2:], np.sqrt(KAPPA * exact_symbol(np.arange(2, 32))), rtol=1e-8)


def test_nonpositive_symbol_is_a_regime_error():
    ell = exact_symbol(np.arange(10))
    ell[4] = -1.0
    with pytest.raises(RegimeError):
        build_sqrt_operator(KAPPA, CurvatureSymbol(ell, np.zeros(10)))
    with pytest.raises(ValueError):
        build_sqrt_operator(0.0, CurvatureSymbol(exact_symbol(np.arange(10)), np.zeros(10)))


def test_boundary_state_roundtrip(symbol):
    S = build_sqrt_operator(KAPPA, symbol)
    h = BoundaryField.from_modes(31, {1: 0.1, 3: 0.01})
    hd = BoundaryField.from_modes(31, {2: 0.2j})
    st = BoundaryState.from_h(h, hd, S)
    np.testing.assert_allclose(st.h().coeffs, h.coeffs, atol=1e-15)
    np.testing.assert_allclose(st.hdot().coeffs, hd.coeffs, atol=1e-15)
    # energy of the block equals kappa <ell h, h> + |h'|^2
    expect = KAPPA * 24.0 * 2 * 0.01**2 + 2 * 0.2**2
    assert st.energy() == pytest.approx(expect, rel=1e-10)


def test_rotate_is_exact_harmonic_flow():
    om = np.array([0.0, 3.0])
    h, hd = rotate(np.array([1.0, 1.0]), np.array([2.0, 0.0]), om, 0.4)
    assert h[0] == pytest.approx(1.0 + 0.8)
    assert hd[0] == pytest.approx(2.0)
    assert h[1] == pytest.approx(np.cos(1.2))
    assert hd[1] == pytest.approx(-3 * np.sin(1.2))


def _oscillator(mu, dt, T, omega=2.0):
    om = np.array([omega])
    y = {"h": np.array([1.0 + 0j]), "hd": np.array([0.0 + 0j])}
    rhs = lambda yy: ({"hd": -mu * yy["h"]}, None)
    n = rhs(y)[0]
    for _ in range(int(round(T / dt))):
        y, n, _, _ = lawson_trapezoid(y, n, rhs, om, dt, tol=1e-14, max_iter=60)
    return y["h"][0].real


def test_lawson_trapezoid_second_order():
    exact = np.cos(np.sqrt(4.0 + 1.0) * 1.0)
    errs = [abs(_oscillator(1.0, dt, 1.0) - exact) for dt in (0.1, 0.05, 0.025)]
    rates = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(rates > 1.9)
    # with N = 0 the step is exact for any dt
    assert _oscillator(0.0, 0.5, 2.0) == pytest.approx(np.cos(4.0), abs=1e-14)


def test_picard_failure_is_reported():
    om = np.array([0.0])
    y = {"h": np.array([1.0 + 0j]), "hd": np.array([0.0 + 0j])}
    rhs = lambda yy: ({"h": 1e3 * yy["hd"], "hd": -1e3 * yy["h"]}, None)
    with pytest.raises(PicardError):
        lawson_trapezoid(y, rhs(y)[0], rhs, om, 0.1, max_iter=5)


def test_rhs_vanishes_for_rigid_rotation(grid, symbol):
    S = build_sqrt_operator(KAPPA, symbol)
    ctx = DynamicsContext(grid, KAPPA, np.stack([-grid.y, grid.x]))
    st = BoundaryState.from_h(BoundaryField.zeros(31), BoundaryField.zeros(31), S)
    _, r2 = assemble_rhs(st, ctx)
    assert np.max(np.abs(r2.coeffs)) < 1e-10


def test_rhs_remainder_is_quadratic(grid, symbol):
    S = build_sqrt_operator(KAPPA, symbol)
    ctx = DynamicsContext.trivial(grid, KAPPA)
    sizes = []
    for a in (1e-3, 1e-4):
        h = BoundaryField.from_modes(31, {2: a, 3: 0.5j * a})
        _, r2 = assemble_rhs(BoundaryState.from_h(h, BoundaryField.zeros(31), S), ctx)
        sizes.append(sobolev_norm_boundary(r2, 0.0))
    assert sizes[0] / sizes[1] == pytest.approx(100.0, rel=0.05)


def test_L1_inverse_identity_for_flat_map(grid):
    w = np.stack([-grid.y, grid.x])
    a = apply_L1_inverse(grid, np.zeros((2, 2) + grid.shape), w)
    a = a[0] if isinstance(a, tuple) else a
    np.testing.assert_allclose(a, w, atol=1e-12)


def test_default_dt_quarter_period(symbol):
    dt = default_dt(KAPPA, symbol)
    assert dt == pytest.approx(np.pi / (2 * np.sqrt(KAPPA * 31 * (31**2 - 1))), rel=1e-9)


def test_dispersion_single_mode():
    m, w = measure_frequency(3, KAPPA, periods=2)
    assert m == pytest.approx(np.sqrt(KAPPA * 24.0), rel=1e-6)
    assert w == pytest.approx(np.sqrt(KAPPA * 24.0), rel=1e-8)


def test_f_interval_blow_up_and_regime_warning(grid, symbol):
    ctx = DynamicsContext.trivial(grid, 1.0)
    big = BoundaryField.from_modes(31, {2: 0.2})
    with pytest.raises(BlowUpError):
        solve_f_interval(big, ctx, 1.0, 2.0, 0.05, symbol)
    small = BoundaryField.from_modes(31, {2: 1e-7})
    with pytest.warns(RuntimeWarning):
        tr = solve_f_interval(small, ctx, 1.0, 0.05, 0.05, symbol, K3=1e-12)
    assert tr.regime_warning
    assert tr.norm_f[0] == 0.0 and tr.norm_f[-1] > 0.0


def test_step_boundary_state_energy(grid, symbol):
    S = build_sqrt_operator(KAPPA, symbol)
    st = BoundaryState.from_h(BoundaryField.from_modes(31, {2: 1e-6}), BoundaryField.zeros(31), S)
    dt = 0.01
    new = step_boundary_state(st, DynamicsContext.trivial(grid, KAPPA), dt)
    assert new.energy() == pytest.approx(st.energy(), rel=1e-6)
    assert new.h().coeff(2).real == pytest.approx(1e-6 * np.cos(S.omega[2] * dt), rel=1e-6)
