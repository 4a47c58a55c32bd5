"""Geometry oracle suite: exact symbol, unit Jacobian, curvature pipeline, quadratic remainder."""

from __future__ import annotations

import numpy as np

from .geometry import (
    DELTA0,
    SOBOLEV_S,
    curvature_composed,
    linearized_curvature_symbol,
    volume_extension,
)
from .spectral import BoundaryField, bd_derivative, get_grid, sobolev_norm_boundary


def exact_symbol(k) -> np.ndarray:
    """``k (k^2 - 1)``: linearised curvature of the circle pushed by ``grad f`` with ``f = e^{ik theta}``."""
    k = np.abs(np.asarray(k, dtype=float))
    return k * (k * k - 1.0)


def curvature_from_hessian(vp) -> np.ndarray:
    """Independent path: tangent ``(I + D^2 f) tau`` from the interior Hessian, curvature = d(angle)/ds."""
    grid = vp.grid
    H = grid.hessian(vp.f)[:, :, :, 0]
    c, s = grid.cos[:, 0], grid.sin[:, 0]
    tx = -s + H[0, 0] * -s + H[0, 1] * c
    ty = c + H[1, 0] * -s + H[1, 1] * c
    ang = np.unwrap(np.arctan2(ty, tx)) - grid.theta
    dang = 1.0 + bd_derivative(BoundaryField.from_samples(ang), 1).samples()
    return dang / np.hypot(tx, ty)


def random_boundary_field(
    rng: np.random.Generator, K: int, fraction: float = 0.5, s: float = SOBOLEV_S, delta0: float = DELTA0
) -> BoundaryField:
    """Mean-free field with ``H^{s+2}`` norm ``fraction * delta0`` and smooth spectral decay."""
    k = np.arange(K + 2)
    c = (rng.standard_normal(K + 2) + 1j * rng.standard_normal(K + 2)) / (1.0 + k**2) ** (s / 2 + 2)
    c[0] = 0.0
    c[-1] = 0.0
    h = BoundaryField(c)
    return h * (fraction * delta0 / sobolev_norm_boundary(h, s + 2.0))


def remainder_slope(K: int = 31, nr: int = 32, seed: int = 0, amplitudes=(1e-4, 1e-3, 1e-2), symbol=None):
    """Log-log slope of ``|F - 1 - L h|`` against ``|h|`` along a fixed random direction."""
    grid = get_grid(K, nr)
    symbol = symbol or linearized_curvature_symbol(K, nr)
    rng = np.random.default_rng(seed)
    d = random_boundary_field(rng, K, 1.0)
    d = d * (1.0 / sobolev_norm_boundary(d, SOBOLEV_S + 2.0))
    errs = []
    for a in amplitudes:
        h = d * a
        F = curvature_composed(volume_extension(h, grid=grid))
        r = F.samples() - 1.0 - symbol.apply(h).samples()
        errs.append(float(np.max(np.abs(r))))
    slope = float(np.polyfit(np.log10(amplitudes), np.log10(errs), 1)[0])
    return slope, errs


def geometry_suite(K: int = 31, nr: int = 32, samples: int = 20, seed: int = 0) -> tuple[bool, list[str]]:
    """Run every oracle; returns overall pass and printable lines (the symbol table first)."""
    grid = get_grid(K, nr)
    lines = []
    ok = True
    sym = linearized_curvature_symbol(K, nr)
    lines.append(f"{'k':>3s} {'ell(k)':>22s} {'k(k^2-1)':>12s} {'rel err':>10s}")
    worst = 0.0
    for k, v in sym.table():
        ex = float(exact_symbol(k)) + 0.0
        rel = abs(v - ex) / max(abs(ex), 1.0)
        worst = max(worst, rel)
        lines.append(f"{k:3d} {v:22.12f} {ex:12.1f} {rel:10.2e}")
    good = worst <= 1e-6
    ok &= good
    lines.append(f"{'PASS' if good else 'FAIL'} symbol: max relative error {worst:.2e} (tol 1e-6)")

    rng = np.random.default_rng(seed)
    jac, curv = 0.0, 0.0
    for _ in range(samples):
        h = random_boundary_field(rng, K, rng.uniform(0.1, 0.9))
        vp = volume_extension(h, grid=grid)
        jac = max(jac, float(np.max(np.abs(vp.jacobian() - 1.0))))
        a = curvature_composed(vp).samples()
        b = curvature_from_hessian(vp)
        curv = max(curv, float(np.max(np.abs(a - b)) / np.max(np.abs(b))))
    good = jac <= 1e-9
    ok &= good
    lines.append(f"{'PASS' if good else 'FAIL'} jacobian: max |J - 1| {jac:.2e} over {samples} fields (tol 1e-9)")
    good = curv <= 1e-10
    ok &= good
    lines.append(f"{'PASS' if good else 'FAIL'} curvature: max relative mismatch {curv:.2e} (tol 1e-10)")

    slope, _ = remainder_slope(K, nr, seed, symbol=sym)
    good = slope >= 1.9
    ok &= good
    lines.append(f"{'PASS' if good else 'FAIL'} remainder: log-log slope {slope:.3f} (needs >= 1.9)")
    return bool(ok), lines
