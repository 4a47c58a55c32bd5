"""Run configuration: a small ``key = value`` format with ``[section]`` headers.

The standard-library INI parser does not report line numbers for semantic
errors, so the format is parsed here by hand; it is a strict subset of INI.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

PRESETS = ("rest", "rotation", "stream", "gradient-pulse")
BASES = ("rest", "rotation", "stream")


class ConfigError(ValueError):
    def __init__(self, violations: list[str]):
        super().__init__("; ".join(violations))
        self.violations = list(violations)


@dataclass(frozen=True)
class SimConfig:
    kappa: float = 400.0
    K: int = 31
    nr: int = 32
    dt: float | None = None
    t_end: float = 0.5
    sobolev_s: float = 4.0
    delta0: float = 0.05
    picard_tol: float = 1e-10
    picard_max: int = 12
    preset: str = "gradient-pulse"
    base: str = "rotation"
    omega: float = 1.0
    amplitude: float = 0.2
    pulse: float = 0.05
    theorem_regime: bool = False
    regime_c: float = 10.0
    output_dir: str = "run"
    stride: float | None = None
    source: dict = field(default_factory=dict, compare=False, repr=False)

    @property
    def sample_interval(self) -> float:
        return self.stride if self.stride is not None else self.t_end / 20.0

    def replace(self, **kw) -> "SimConfig":
        return dataclasses.replace(self, **kw)

    def echo(self) -> dict:
        return {f.name: getattr(self, f.name) for f in dataclasses.fields(self) if f.name != "source"}

    def validate(self) -> list[str]:
        return _check_invariants(self, {})


# section -> key -> (field name, type)
_SCHEMA: dict[str, dict[str, tuple[str, type]]] = {
    "domain": {
        "kappa": ("kappa", float),
        "modes": ("K", int),
        "radial": ("nr", int),
        "sobolev_s": ("sobolev_s", float),
        "delta0": ("delta0", float),
    },
    "time": {
        "dt": ("dt", float),
        "t_end": ("t_end", float),
        "picard_tol": ("picard_tol", float),
        "picard_max": ("picard_max", int),
    },
    "init": {
        "preset": ("preset", str),
        "base": ("base", str),
        "omega": ("omega", float),
        "amplitude": ("amplitude", float),
        "pulse": ("pulse", float),
        "theorem_regime": ("theorem_regime", bool),
        "regime_c": ("regime_c", float),
    },
    "output": {
        "output_dir": ("output_dir", str),
        "stride": ("stride", float),
    },
}


def _convert(raw: str, typ: type, key: str):
    if typ is bool:
        low = raw.lower()
        if low in ("true", "yes", "1", "on"):
            return True
        if low in ("false", "no", "0", "off"):
            return False
        raise ValueError(f"{key} expects a boolean, got {raw!r}")
    if typ is int:
        try:
            return int(raw)
        except ValueError:
            raise ValueError(f"{key} expects an integer, got {raw!r}") from None
    if typ is float:
        try:
            return float(raw)
        except ValueError:
            raise ValueError(f"{key} expects a number, got {raw!r}") from None
    return raw


def _check_invariants(cfg: SimConfig, lines: dict[str, int]) -> list[str]:
    def at(name: str) -> str:
        return f"line {lines[name]}: " if name in lines else ""

    out = []
    if not cfg.kappa > 0:
        out.append(f"{at('kappa')}kappa must be > 0 (the problem is ill-posed without surface tension)")
    if not cfg.sobolev_s > 3.5:
        out.append(f"{at('sobolev_s')}sobolev_s must exceed 7/2, got {cfg.sobolev_s:g}")
    if cfg.K < 8:
        out.append(f"{at('K')}modes must be >= 8, got {cfg.K}")
    if cfg.nr < 8:
        out.append(f"{at('nr')}radial must be >= 8, got {cfg.nr}")
    if cfg.dt is not None and not cfg.dt > 0:
        out.append(f"{at('dt')}dt must be positive or 'auto'")
    if not cfg.t_end > 0:
        out.append(f"{at('t_end')}t_end must be positive")
    if not cfg.delta0 > 0:
        out.append(f"{at('delta0')}delta0 must be positive")
    if not cfg.picard_tol > 0:
        out.append(f"{at('picard_tol')}picard_tol must be positive")
    if cfg.picard_max < 1:
        out.append(f"{at('picard_max')}picard_max must be >= 1")
    if cfg.preset not in PRESETS:
        out.append(f"{at('preset')}unknown preset {cfg.preset!r} (choose from {', '.join(PRESETS)})")
    if cfg.base not in BASES:
        out.append(f"{at('base')}unknown base {cfg.base!r} (choose from {', '.join(BASES)})")
    if cfg.stride is not None and not (0 < cfg.stride <= cfg.t_end):
        out.append(f"{at('stride')}stride must lie in (0, t_end]")
    return out


def parse_config(text: str) -> SimConfig:
    """Parse and validate; every violation is reported with its line number."""
    values: dict = {}
    lines: dict[str, int] = {}
    errors: list[str] = []
    section = None
    for num, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].split(";", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                errors.append(f"line {num}: malformed section header {raw.strip()!r}")
                continue
            section = line[1:-1].strip().lower()
            if section not in _SCHEMA:
                errors.append(f"line {num}: unknown section [{section}]")
            continue
        if "=" not in line:
            errors.append(f"line {num}: expected 'key = value', got {raw.strip()!r}")
            continue
        key, val = (p.strip() for p in line.split("=", 1))
        key = key.lower()
        if section is None:
            errors.append(f"line {num}: key {key!r} outside any section")
            continue
        if section not in _SCHEMA:
            continue
        if key not in _SCHEMA[section]:
            errors.append(f"line {num}: unknown key {key!r} in [{section}]")
            continue
        name, typ = _SCHEMA[section][key]
        if name in lines:
            errors.append(f"line {num}: duplicate key {key!r} (first set on line {lines[name]})")
            continue
        if name in ("dt", "stride") and val.lower() == "auto":
            values[name] = None
            lines[name] = num
            continue
        try:
            values[name] = _convert(val, typ, key)
            lines[name] = num
        except ValueError as exc:
            errors.append(f"line {num}: {exc}")
    cfg = SimConfig(**values, source={"text": text})
    errors += _check_invariants(cfg, lines)
    if errors:
        raise ConfigError(errors)
    return cfg


def format_config(cfg: SimConfig) -> str:
    """Inverse of :func:`parse_config` (round-trips every field)."""
    out = []
    for section, keys in _SCHEMA.items():
        out.append(f"[{section}]")
        for key, (name, _) in keys.items():
            val = getattr(cfg, name)
            if val is None:
                val = "auto"
            elif isinstance(val, bool):
                val = "true" if val else "false"
            elif isinstance(val, float):
                val = repr(val)
            out.append(f"{key} = {val}")
        out.append("")
    return "\n".join(out)
