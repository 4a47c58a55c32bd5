"""Run records shared by the solvers, the harness and the CLI."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

COLUMNS = (
    "t",
    "E_kin",
    "E_surf",
    "E_total",
    "f_norm",
    "fdot_norm",
    "jac_defect",
    "vorticity_drift",
    "chi_gap",
    "boundary_length",
)


@dataclass
class RunRecord:
    """Time series of diagnostics (one row per sample time) plus optional field snapshots."""

    kind: str
    config: dict
    symbol: list = field(default_factory=list)
    rows: list = field(default_factory=list)
    fields: dict = field(default_factory=dict)
    derived: dict = field(default_factory=dict)
    status: str = "running"

    def add_row(self, **values):
        row = tuple(float(values.get(c, 0.0)) for c in COLUMNS)
        if self.rows and not row[0] > self.rows[-1][0]:
            raise ValueError("record times must increase strictly")
        if not all(np.isfinite(row)):
            raise ValueError(f"non-finite diagnostics at t={row[0]}")
        self.rows.append(row)

    def add_fields(self, **arrays):
        for k, a in arrays.items():
            self.fields.setdefault(k, []).append(np.array(a))

    def column(self, name: str) -> np.ndarray:
        j = COLUMNS.index(name)
        return np.array([r[j] for r in self.rows])

    @property
    def t(self) -> np.ndarray:
        return self.column("t")

    def energy_drift(self) -> float:
        E = self.column("E_total")
        kappa = float(self.config.get("kappa", 0.0))
        return float(np.max(np.abs(E - E[0])) / max(abs(E[0]), kappa * 1e-6, 1e-300))
