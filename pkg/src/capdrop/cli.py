"""Command-line entry point: ``capdrop <verb> ...``.

Exit codes: 0 success, 1 invalid input, 2 numerical blow-up, 3 failed check.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .boundary import BlowUpError
from .config import ConfigError, SimConfig, format_config, parse_config
from .records import COLUMNS, RunRecord

EXIT_OK, EXIT_INVALID, EXIT_BLOWUP, EXIT_CHECK = 0, 1, 2, 3

log = logging.getLogger("capdrop")


# --- persistence ----------------------------------------------------------------


def fmt(x: float) -> str:
    return format(float(x), ".17g")


def write_timeseries(path: Path, rec: RunRecord) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(",".join(COLUMNS) + "\n")
        for row in rec.rows:
            fh.write(",".join(fmt(v) for v in row) + "\n")


def read_timeseries(path: Path) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    data = np.array([[float(v) for v in r] for r in body]) if body else np.zeros((0, len(header)))
    return {name: data[:, j] for j, name in enumerate(header)}


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    return x


class Manifest:
    """``manifest.json``: written before stepping, rewritten with derived constants on exit."""

    def __init__(self, run_dir: Path, kind: str, cfg: SimConfig, symbol=None):
        self.path = run_dir / "manifest.json"
        self.data = {
            "kind": kind,
            "code_version": __version__,
            "config": cfg.echo(),
            "config_text": format_config(cfg),
            "timeseries_columns": list(COLUMNS),
            "float_format": "17 significant digits",
            "interior_norm": "weighted Chebyshev-Fourier coefficient norm, weight (1 + m^2 + n^2)^s",
            "curvature_symbol": [list(p) for p in symbol] if symbol is not None else [],
            "derived": {},
            "status": "running",
        }
        self.write()

    def write(self) -> None:
        self.path.write_text(json.dumps(_jsonable(self.data), indent=2, sort_keys=True) + "\n")

    def finalize(self, status: str, derived: dict | None = None, **extra) -> None:
        self.data["status"] = status
        if derived:
            self.data["derived"].update(derived)
        self.data.update(extra)
        self.write()


def _load_config(path: str) -> SimConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError([f"cannot read {path}: {exc.strerror}"]) from None
    return parse_config(text)


def _run_dir(cfg: SimConfig, out: str | None) -> Path:
    d = Path(out or cfg.output_dir)
    d.mkdir(parents=True, exist_ok=True)
    return d


# --- verbs ----------------------------------------------------------------------


def _simulate(args, kind: str) -> int:
    from .lagrangian import curvature_symbol, run_free_boundary
    from .fixed_euler import run_fixed_boundary

    cfg = _load_config(args.config)
    run_dir = _run_dir(cfg, args.out)
    symbol = curvature_symbol(cfg.K, cfg.nr).table() if kind == "free" else None
    manifest = Manifest(run_dir, kind, cfg, symbol)
    try:
        rec = run_free_boundary(cfg) if kind == "free" else run_fixed_boundary(cfg)
    except BlowUpError as exc:
        rec = getattr(exc, "record", None)
        if rec is not None:
            write_timeseries(run_dir / "timeseries.csv", rec)
        manifest.finalize("blow-up", rec.derived if rec else None, message=str(exc))
        print(f"blow-up: {exc}", file=sys.stderr)
        return EXIT_BLOWUP
    except FloatingPointError as exc:
        manifest.finalize("blow-up", message=str(exc))
        print(f"blow-up: {exc}", file=sys.stderr)
        return EXIT_BLOWUP
    write_timeseries(run_dir / "timeseries.csv", rec)
    manifest.finalize(rec.status, rec.derived)
    print(f"{kind} run complete: {len(rec.rows)} samples, energy drift {rec.energy_drift():.3e} -> {run_dir}")
    return EXIT_OK


def cmd_simulate_free(args) -> int:
    return _simulate(args, "free")


def cmd_simulate_fixed(args) -> int:
    return _simulate(args, "fixed")


def _parse_kappas(text: str) -> list[float]:
    try:
        ks = [float(k) for k in text.split(",") if k.strip()]
    except ValueError:
        raise ConfigError([f"--kappas expects a comma separated list of numbers, got {text!r}"]) from None
    if len(ks) < 2 or any(not k > 0 for k in ks):
        raise ConfigError(["--kappas needs at least two positive values"])
    return ks


REPORT_FIELDS = ("record", "quantity", "kappa", "value", "lower", "upper", "residual", "status")


def cmd_sweep(args) -> int:
    from .harness import kappa_sweep

    cfg = _load_config(args.config)
    kappas = _parse_kappas(args.kappas)
    run_dir = _run_dir(cfg, args.out)
    manifest = Manifest(run_dir, "sweep", cfg)
    manifest.data["kappas"] = kappas
    manifest.write()
    report, records, fixed = kappa_sweep(cfg, kappas, workers=args.workers)
    for k, rec in zip(report.kappas, records):
        sub = run_dir / f"kappa_{fmt(k)}"
        sub.mkdir(exist_ok=True)
        if rec is not None:
            write_timeseries(sub / "timeseries.csv", rec)
            m = Manifest(sub, "free", cfg.replace(kappa=k), rec.symbol)
            m.finalize(rec.status, rec.derived)
    sub = run_dir / "fixed"
    sub.mkdir(exist_ok=True)
    write_timeseries(sub / "timeseries.csv", fixed)
    Manifest(sub, "fixed", cfg).finalize(fixed.status, fixed.derived)
    # the fixed-boundary run stands in for the sweep directory's own time series
    write_timeseries(run_dir / "timeseries.csv", fixed)
    with open(run_dir / "report.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=REPORT_FIELDS, lineterminator="\n")
        w.writeheader()
        for row in report.table():
            w.writerow({k: (fmt(v) if isinstance(v, float) else v) for k, v in row.items()})
    status = "complete" if report.complete else "blow-up"
    manifest.finalize(status, {"flagged": report.flagged, "notes": report.notes})
    for q, f in report.fits.items():
        print(f"slope {q:10s} {f.slope:+.3f}  95% CI [{f.ci[0]:+.3f}, {f.ci[1]:+.3f}]  residual {f.residual:.3f}")
    for note in report.notes:
        print(f"note: {note}")
    return EXIT_OK if report.complete else EXIT_BLOWUP


def cmd_verify_geometry(args) -> int:
    from .verify import geometry_suite

    ok, lines = geometry_suite(K=args.modes, nr=args.radial, samples=args.samples, seed=args.seed)
    for line in lines:
        print(line)
    return EXIT_OK if ok else EXIT_CHECK


def cmd_scale_check(args) -> int:
    from .harness import scaling_check

    cfg = _load_config(args.config)
    res = scaling_check(cfg, args.lam)
    ok = res.defect_refined <= args.tol
    print(f"lambda {res.lam:g}: defect {res.defect:.3e} at dt {res.dt:.6g}, {res.defect_refined:.3e} at dt/2")
    print("PASS" if ok else "FAIL")
    return EXIT_OK if ok else EXIT_CHECK


def cmd_report(args) -> int:
    header = f"{'run':30s} {'kind':6s} {'status':9s} {'samples':>7s} {'E drift':>10s} {'max f':>10s} {'max |J-1|':>10s}"
    print(header)
    code = EXIT_OK
    for d in args.run_dirs:
        d = Path(d)
        try:
            man = json.loads((d / "manifest.json").read_text())
            ts = read_timeseries(d / "timeseries.csv")
        except (OSError, ValueError) as exc:
            print(f"{str(d):30s} unreadable: {exc}", file=sys.stderr)
            code = EXIT_INVALID
            continue
        E = ts["E_total"]
        scale = max(abs(E[0]), float(man["config"].get("kappa", 0.0)) * 1e-6, 1e-300) if E.size else 1.0
        drift = float(np.max(np.abs(E - E[0])) / scale) if E.size else float("nan")
        print(
            f"{str(d):30s} {man['kind']:6s} {man['status']:9s} {E.size:7d} {drift:10.3e} "
            f"{np.max(ts['f_norm'], initial=0.0):10.3e} {np.max(ts['jac_defect'], initial=0.0):10.3e}"
        )
    return code


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="capdrop", description="Capillary drop simulator on the unit disk.")
    p.add_argument("--version", action="version", version=f"capdrop {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log solver progress")
    sub = p.add_subparsers(dest="verb", required=True)

    for name, fn, text in (
        ("simulate-free", cmd_simulate_free, "free-boundary run"),
        ("simulate-fixed", cmd_simulate_fixed, "fixed-boundary Euler run from the projected data"),
    ):
        s = sub.add_parser(name, help=text)
        s.add_argument("config")
        s.add_argument("--out", help="run directory (default: output_dir from the config)")
        s.set_defaults(func=fn)

    s = sub.add_parser("sweep", help="surface tension sweep against the fixed-boundary limit")
    s.add_argument("config")
    s.add_argument("--kappas", default="1e2,1e3,1e4")
    s.add_argument("--workers", type=int, default=None, help="worker processes (capped by CAPDROP_WORKERS)")
    s.add_argument("--out")
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("verify-geometry", help="geometry oracle suite and curvature symbol table")
    s.add_argument("--modes", type=int, default=31)
    s.add_argument("--radial", type=int, default=32)
    s.add_argument("--samples", type=int, default=20)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_verify_geometry)

    s = sub.add_parser("scale-check", help="length scaling correspondence")
    s.add_argument("config")
    s.add_argument("--lambda", dest="lam", type=float, default=2.0)
    s.add_argument("--tol", type=float, default=1e-5)
    s.set_defaults(func=cmd_scale_check)

    s = sub.add_parser("report", help="summarise run directories")
    s.add_argument("run_dirs", nargs="+")
    s.set_defaults(func=cmd_report)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INVALID if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        for v in exc.violations:
            print(f"config error: {v}", file=sys.stderr)
        return EXIT_INVALID
    except BlowUpError as exc:
        print(f"blow-up: {exc}", file=sys.stderr)
        return EXIT_BLOWUP


if __name__ == "__main__":
    sys.exit(main())
