"""Versioned run reports (JSON) and plot-ready tables (CSV)."""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence

import jsonschema
import numpy as np

__all__ = ["REPORT_SCHEMA_ID", "report_schema", "CSV_COLUMNS", "FIELD_COLUMNS", "ReportError",
           "RunReport", "write_csv", "read_csv", "write_field_samples"]

REPORT_SCHEMA_ID = "axiscatter.report/1"
CSV_COLUMNS = ("label", "N", "n", "m", "N_compressed", "iterations", "t_pre", "t_solve",
               "rel_inf_error", "converged")
FIELD_COLUMNS = ("x", "y", "z", "re", "im")
TIMING_FIELDS = ("t_pre", "t_solve", "t_skeleton", "t_total")


class ReportError(ValueError):
    """Malformed report or schema version mismatch."""


def report_schema() -> dict:
    return json.loads(resources.files("axiscatter").joinpath("schemas/report.schema.json").read_text())


@dataclass
class RunReport:
    """Outcome of one solve plus everything needed to reproduce it.

    Timing fields are wall-clock seconds from a monotonic clock and are the
    only fields allowed to differ between repeated runs of one config.
    """

    label: str
    config: dict
    kernel: dict
    N: int
    n: list
    m: int
    iterations: int
    residual_history: list
    residual_kind: str
    converged: bool
    stagnated: bool
    preconditioned: bool
    rel_inf_error: Optional[float] = None
    target_margin: Optional[float] = None
    degraded_targets: bool = False
    N_compressed: Optional[int] = None
    ranks: Optional[list] = None
    eps: Optional[float] = None
    t_pre: float = 0.0
    t_solve: float = 0.0
    t_skeleton: Optional[float] = None
    t_total: float = 0.0
    backend: str = ""
    schema: str = REPORT_SCHEMA_ID
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return json.loads(json.dumps(asdict(self)))

    def payload(self) -> dict:
        """Report without timing fields, for determinism comparisons."""
        d = self.to_dict()
        for k in TIMING_FIELDS:
            d.pop(k, None)
        return d

    def to_json(self, indent: int = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent, allow_nan=True)

    @classmethod
    def from_dict(cls, d: dict) -> "RunReport":
        if d.get("schema") != REPORT_SCHEMA_ID:
            raise ReportError(f"report schema {d.get('schema')!r} is not {REPORT_SCHEMA_ID!r}")
        try:
            jsonschema.validate(d, report_schema())
        except jsonschema.ValidationError as exc:
            raise ReportError(f"invalid report: {exc.message}") from exc
        return cls(**d)

    @classmethod
    def from_json(cls, text: str) -> "RunReport":
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as exc:
            raise ReportError(f"not JSON: {exc}") from exc

    def save(self, path) -> None:
        Path(path).write_text(self.to_json() + "\n")

    @classmethod
    def load(cls, path) -> "RunReport":
        return cls.from_json(Path(path).read_text())

    def csv_row(self) -> dict:
        return {
            "label": self.label, "N": self.N, "n": ";".join(map(str, self.n)), "m": self.m,
            "N_compressed": "" if self.N_compressed is None else self.N_compressed,
            "iterations": self.iterations, "t_pre": repr(self.t_pre),
            "t_solve": repr(self.t_solve),
            "rel_inf_error": "" if self.rel_inf_error is None else repr(self.rel_inf_error),
            "converged": int(self.converged),
        }


def write_csv(path, reports: Sequence[RunReport]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=CSV_COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in reports:
            w.writerow(r.csv_row())


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if rows and tuple(rows[0]) != CSV_COLUMNS:
        raise ReportError("unexpected CSV header")
    return rows


def write_field_samples(path, points, values) -> None:
    pts = np.asarray(points, float)
    u = np.asarray(values, complex)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(FIELD_COLUMNS)
        for x, v in zip(pts, u):
            w.writerow([repr(float(x[0])), repr(float(x[1])), repr(float(x[2])),
                        repr(float(v.real)), repr(float(v.imag))])
