"""Check records shared by every module and serialised by the CLI."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

PASS = "pass"
FAIL = "fail"
DIAGNOSTIC = "diagnostic"


def to_jsonable(obj: Any) -> Any:
    """Convert numpy scalars/arrays and non-finite floats into JSON-safe values."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [to_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    return obj


@dataclass
class Report:
    """Outcome of one check: a status plus the numbers that justify it."""

    name: str
    status: str
    metrics: dict = field(default_factory=dict)
    stderr: float | None = None
    notes: list = field(default_factory=list)
    tables: dict = field(default_factory=dict)
    runtime: float | None = None

    @property
    def passed(self) -> bool:
        return self.status != FAIL

    def to_dict(self, include_tables: bool = True) -> dict:
        out = {
            "name": self.name,
            "status": self.status,
            "metrics": to_jsonable(self.metrics),
            "stderr": to_jsonable(self.stderr),
            "notes": list(self.notes),
            "runtime": to_jsonable(self.runtime),
        }
        if include_tables and self.tables:
            out["tables"] = to_jsonable(self.tables)
        return out


def gate(name: str, ok: bool, **kwargs) -> Report:
    return Report(name=name, status=PASS if ok else FAIL, **kwargs)
