"""Diagnostics, surface-tension sweeps and comparisons against the fixed-boundary limit."""

from __future__ import annotations

import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .boundary import BlowUpError, DynamicsContext, solve_f_interval
from .config import SimConfig
from .fixed_euler import run_fixed_boundary
from .lagrangian import FreeBoundaryState, curvature_symbol, initial_velocity, run_free_boundary
from .records import RunRecord
from .spectral import BoundaryField, PolarGrid, get_grid

log = logging.getLogger(__name__)

FIT_RESIDUAL_FLAG = 0.15
WORKERS_ENV = "CAPDROP_WORKERS"


def energy(state: FreeBoundaryState, kappa: float | None = None) -> tuple[float, float, float]:
    """``(E_kin, E_surf, E_total)`` with ``E_surf = kappa (length - 2 pi)``."""
    if kappa is not None and kappa != state.kappa:
        state = FreeBoundaryState(state.t, state.y, state.n, state.ft, state.ev, kappa, state.extras)
    return state.energy()


def worker_count(requested: int | None = None, jobs: int = 1) -> int:
    """Requested count, capped by ``$CAPDROP_WORKERS``, the CPU count and the number of jobs."""
    n = requested or os.cpu_count() or 1
    cap = os.environ.get(WORKERS_ENV)
    if cap:
        try:
            n = min(n, max(1, int(cap)))
        except ValueError:
            raise ValueError(f"{WORKERS_ENV} must be a positive integer, got {cap!r}") from None
    return max(1, min(n, jobs))


# --- fits ---------------------------------------------------------------------


@dataclass(frozen=True)
class Fit:
    """Least-squares line through ``(log10 x, log10 y)``."""

    slope: float
    intercept: float
    residual: float
    ci: tuple[float, float]

    @property
    def flagged(self) -> bool:
        return not np.isfinite(self.residual) or self.residual > FIT_RESIDUAL_FLAG


def loglog_fit(x, y, confidence: float = 0.95) -> Fit:
    """Slope, RMS residual (decades) and a Student-t confidence interval for the slope."""
    with np.errstate(divide="ignore", invalid="ignore"):
        lx = np.log10(np.asarray(x, dtype=float))
        ly = np.log10(np.asarray(y, dtype=float))
    if lx.size < 2 or not np.all(np.isfinite(ly)):
        return Fit(float("nan"), float("nan"), float("nan"), (float("nan"), float("nan")))
    res = stats.linregress(lx, ly)
    resid = ly - (res.intercept + res.slope * lx)
    rms = float(np.sqrt(np.mean(resid**2)))
    dof = lx.size - 2
    if dof > 0:
        half = float(stats.t.ppf(0.5 + confidence / 2, dof) * res.stderr)
    else:
        half = float("inf")
    return Fit(float(res.slope), float(res.intercept), rms, (res.slope - half, res.slope + half))


# --- comparisons --------------------------------------------------------------


def _grid_of(rec: RunRecord) -> PolarGrid:
    return get_grid(int(rec.config["K"]), int(rec.config["nr"]))


def _check_pair(free: RunRecord, fixed: RunRecord) -> PolarGrid:
    if (free.config["K"], free.config["nr"]) != (fixed.config["K"], fixed.config["nr"]):
        raise ValueError("records were computed on different grids")
    if not free.fields or not fixed.fields:
        raise ValueError("field snapshots are required (run with record_fields=True)")
    return _grid_of(free)


def _sample_index(rec: RunRecord, t: float) -> int:
    times = np.asarray(rec.fields["t"])
    j = int(np.argmin(np.abs(times - t)))
    if abs(times[j] - t) > 1e-9 * max(1.0, abs(t)):
        raise ValueError(f"t = {t:g} is not a sample time of the {rec.kind} record")
    return j


def field_norm(grid: PolarGrid, X: np.ndarray, s: float) -> float:
    """Weighted spectral-coefficient norm (the discrete ``H^s`` stand-in); ``s = 0`` is close to ``L2``."""
    return grid.sobolev_norm(X, s)


def trajectory_gaps(free: RunRecord, fixed: RunRecord, s: float = 0.0) -> dict[str, float]:
    """``sup_t`` of ``|eta - zeta|``, ``|eta' - zeta'|`` and ``|beta - zeta|`` over common sample times."""
    grid = _check_pair(free, fixed)
    out = {"eta": 0.0, "eta_dot": 0.0, "beta": 0.0}
    tf = np.asarray(fixed.fields["t"])
    for j, t in enumerate(free.fields["t"]):
        k = int(np.argmin(np.abs(tf - t)))
        if abs(tf[k] - t) > 1e-9:
            continue
        zeta = fixed.fields["eta"][k]
        out["eta"] = max(out["eta"], field_norm(grid, free.fields["eta"][j] - zeta, s))
        out["eta_dot"] = max(
            out["eta_dot"], field_norm(grid, free.fields["eta_dot"][j] - fixed.fields["eta_dot"][k], s)
        )
        out["beta"] = max(out["beta"], field_norm(grid, free.fields["beta"][j] - zeta, s))
    return out


def pressure_integral_compare(
    free: RunRecord, fixed: RunRecord, t_a: float = 0.0, t_b: float | None = None, s: float = 0.0
) -> float:
    """Norm of ``int_{t_a}^{t_b} (grad p o eta - grad pi o zeta) dt`` on the reference grid."""
    grid = _check_pair(free, fixed)
    t_b = float(free.fields["t"][-1]) if t_b is None else t_b
    if not 0.0 <= t_a < t_b:
        raise ValueError("need 0 <= t_a < t_b")

    def integral(rec: RunRecord) -> np.ndarray:
        P = rec.fields["pressure_integral"]
        return P[_sample_index(rec, t_b)] - P[_sample_index(rec, t_a)]

    return field_norm(grid, integral(free) - integral(fixed), s)


def pressure_integral_uniform(free: RunRecord, fixed: RunRecord, s: float = 0.0) -> float:
    """Largest :func:`pressure_integral_compare` over all pairs of common sample times."""
    grid = _check_pair(free, fixed)
    tf = np.asarray(fixed.fields["t"])
    idx = []
    for j, t in enumerate(free.fields["t"]):
        k = int(np.argmin(np.abs(tf - t)))
        if abs(tf[k] - t) <= 1e-9:
            idx.append((j, k))
    P, Q = free.fields["pressure_integral"], fixed.fields["pressure_integral"]
    diff = [P[j] - Q[k] for j, k in idx]
    best = 0.0
    for a in range(len(diff)):
        for b in range(a + 1, len(diff)):
            best = max(best, field_norm(grid, diff[b] - diff[a], s))
    return best


def pressure_initial_gap(free: RunRecord, fixed: RunRecord) -> float:
    """``|grad p_kappa(0) o eta(0) - grad pi(0) o zeta(0)|_0``."""
    grid = _check_pair(free, fixed)
    return grid.l2_norm(free.fields["pressure_gradient"][0] - fixed.fields["pressure_gradient"][0])


# --- sweep --------------------------------------------------------------------


@dataclass
class MemberResult:
    kappa: float
    status: str
    sup_f: float
    sup_fdot: float
    K3: float
    eta_gap: float = float("nan")
    eta_dot_gap: float = float("nan")
    beta_gap: float = float("nan")
    pressure_integral_gap: float = float("nan")
    pressure_interval_sup: float = float("nan")
    pressure_initial_gap: float = float("nan")
    message: str = ""


@dataclass
class ConvergenceReport:
    """Per-member sup norms and gaps to the fixed-boundary run, plus log-log fits against ``kappa``."""

    kappas: list[float]
    members: list[MemberResult]
    fits: dict[str, Fit]
    flagged: bool
    notes: list[str] = field(default_factory=list)

    def series(self, name: str) -> np.ndarray:
        return np.array([getattr(m, name) for m in self.members])

    @property
    def complete(self) -> bool:
        return all(m.status == "complete" for m in self.members)

    def decreasing(self, name: str, final_fraction: float | None = None) -> bool:
        v = self.series(name)
        ok = bool(np.all(np.isfinite(v)) and np.all(np.diff(v) < 0))
        if ok and final_fraction is not None:
            ok = v[-1] <= final_fraction * v[0]
        return ok

    def table(self) -> list[dict]:
        """Rows for ``report.csv``: one per member, then one per fitted slope."""
        rows = []
        for m in self.members:
            for q in (
                "sup_f",
                "sup_fdot",
                "eta_gap",
                "eta_dot_gap",
                "beta_gap",
                "pressure_integral_gap",
                "pressure_interval_sup",
                "pressure_initial_gap",
            ):
                rows.append(
                    dict(record="member", quantity=q, kappa=m.kappa, value=getattr(m, q), status=m.status)
                )
        for q, f in self.fits.items():
            rows.append(
                dict(
                    record="slope",
                    quantity=q,
                    value=f.slope,
                    lower=f.ci[0],
                    upper=f.ci[1],
                    residual=f.residual,
                    status="flagged" if f.flagged else "ok",
                )
            )
        return rows


def _run_member(args):
    cfg, kind = args
    try:
        if kind == "fixed":
            return run_fixed_boundary(cfg, record_fields=True), ""
        return run_free_boundary(cfg, record_fields=True), ""
    except BlowUpError as exc:
        rec = getattr(exc, "record", None)
        return rec, str(exc)


def kappa_sweep(
    cfg: SimConfig, kappas, workers: int | None = None, gap_s: float | None = None
) -> tuple[ConvergenceReport, list[RunRecord], RunRecord]:
    """Free runs at each ``kappa`` and one fixed-boundary run from ``P u0``, compared sample by sample.

    Gaps use the discrete ``H^s`` stand-in with ``s = gap_s`` (default ``cfg.sobolev_s``);
    the initial pressure gap is always the ``L2`` norm.
    """
    gap_s = cfg.sobolev_s if gap_s is None else gap_s
    kappas = sorted(float(k) for k in kappas)
    jobs = [(cfg.replace(kappa=k), "free") for k in kappas] + [(cfg, "fixed")]
    n = worker_count(workers, len(jobs))
    if n > 1:
        with ProcessPoolExecutor(max_workers=n) as pool:
            results = list(pool.map(_run_member, jobs))
    else:
        results = [_run_member(j) for j in jobs]
    fixed, fixed_msg = results[-1]
    if fixed is None or fixed.status != "complete":
        raise RuntimeError(f"fixed-boundary reference run failed: {fixed_msg}")

    members, records, notes = [], [], []
    for k, (rec, msg) in zip(kappas, results[:-1]):
        records.append(rec)
        if rec is None or not rec.rows:
            members.append(MemberResult(k, "blow-up", np.nan, np.nan, np.nan, message=msg))
            notes.append(f"kappa={k:g}: no samples ({msg})")
            continue
        m = MemberResult(
            k,
            rec.status,
            float(rec.column("f_norm").max()),
            float(rec.column("fdot_norm").max()),
            float(rec.derived.get("K3", np.nan)),
            message=msg,
        )
        gaps = trajectory_gaps(rec, fixed, gap_s)
        m.eta_gap, m.eta_dot_gap, m.beta_gap = gaps["eta"], gaps["eta_dot"], gaps["beta"]
        m.pressure_initial_gap = pressure_initial_gap(rec, fixed)
        if rec.status == "complete":
            m.pressure_integral_gap = pressure_integral_compare(rec, fixed, s=gap_s)
            m.pressure_interval_sup = pressure_integral_uniform(rec, fixed, s=gap_s)
        else:
            notes.append(f"kappa={k:g}: {msg}")
        members.append(m)

    ok = [m for m in members if m.status == "complete"]
    x = [m.kappa for m in ok]
    fits = {
        "f_norm": loglog_fit(x, [m.sup_f for m in ok]),
        "fdot_norm": loglog_fit(x, [m.sup_fdot for m in ok]),
        "eta_gap": loglog_fit(x, [m.eta_gap for m in ok]),
    }
    flagged = len(ok) < len(members) or any(f.flagged for f in fits.values())
    for q, f in fits.items():
        if f.flagged:
            notes.append(f"{q}: fit residual {f.residual:.3g} exceeds {FIT_RESIDUAL_FLAG}")
    return ConvergenceReport(kappas, members, fits, flagged, notes), records, fixed


# --- length scaling -------------------------------------------------------------


@dataclass(frozen=True)
class ScalingResult:
    lam: float
    defect: float
    defect_refined: float
    dt: float


def scaling_check(cfg: SimConfig, lam: float = 2.0) -> ScalingResult:
    """Compare ``eta`` at ``kappa`` with the run at ``lam^3 kappa``, velocity ``lam^1.5 u0``, time ``t / lam^1.5``.

    The defect is the largest node displacement difference at common sample
    times, relative to the largest displacement; it is computed at the default
    step and once more with both steps halved.
    """
    if not lam > 0:
        raise ValueError("lam must be positive")
    c = lam**1.5
    grid = get_grid(cfg.K, cfg.nr)
    u0 = initial_velocity(cfg, grid)
    stride = cfg.sample_interval

    def pair(dt):
        a = run_free_boundary(cfg.replace(dt=dt), u0=u0, record_fields=True)
        dt_b = a.derived["dt"] / c
        b_cfg = cfg.replace(kappa=cfg.kappa * lam**3, t_end=cfg.t_end / c, stride=stride / c, dt=dt_b)
        b = run_free_boundary(b_cfg, u0=c * u0, record_fields=True)
        ea, eb = np.asarray(a.fields["eta"]), np.asarray(b.fields["eta"])
        scale = max(float(np.max(np.abs(ea - grid.position))), 1e-300)
        return float(np.max(np.abs(ea - eb))) / scale, a.derived["dt"]

    d0, dt = pair(cfg.dt)
    d1, _ = pair(dt / 2)
    return ScalingResult(lam, d0, d1, dt)


def rotation_error(rec: RunRecord, omega: float | None = None) -> np.ndarray:
    """Per-sample ``max |eta(t) - R(omega t) x|`` for a rigid-rotation run."""
    grid = _grid_of(rec)
    omega = float(rec.config["omega"]) if omega is None else omega
    out = []
    for t, eta in zip(rec.fields["t"], rec.fields["eta"]):
        c, s = np.cos(omega * t), np.sin(omega * t)
        exact = np.stack([c * grid.x - s * grid.y, s * grid.x + c * grid.y])
        out.append(float(np.max(np.abs(eta - exact))))
    return np.array(out)


def measure_frequency(
    k: int, kappa: float, K: int = 31, nr: int = 32, amplitude: float = 1e-6, periods: int = 3, per_period: int = 40
) -> tuple[float, float]:
    """``(measured, predicted)`` angular frequency of a single surface mode over a fluid at rest.

    The mode starts from ``h = 0``, ``h' = amplitude cos(k theta)``; the measured
    frequency is ``pi`` over the mean spacing of interpolated zero crossings.
    """
    grid = get_grid(K, nr)
    sym = curvature_symbol(K, nr)
    omega = float(np.sqrt(kappa * sym(k)))
    period = 2.0 * np.pi / omega
    f1 = BoundaryField.from_modes(K, {k: 0.5 * amplitude})
    tr = solve_f_interval(f1, DynamicsContext.trivial(grid, kappa), kappa, periods * period, period / per_period, sym)
    x, t = tr.mode(k).real, tr.t
    j = np.flatnonzero(np.sign(x[1:-1]) * np.sign(x[2:]) < 0) + 1
    zc = t[j] - x[j] * (t[j + 1] - t[j]) / (x[j + 1] - x[j])
    if zc.size < 2:
        raise RuntimeError(f"mode {k} did not oscillate over {periods} periods")
    return float(np.pi / np.mean(np.diff(zc))), omega
