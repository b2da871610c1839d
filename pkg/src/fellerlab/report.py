"""Structured verdicts for the stability conditions and their serialisation."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from importlib import resources

SCHEMA_VERSION = "1.0"

CONDITIONS = ("EC", "TV-EC", "C1", "C2", "C4")
VERDICTS = ("supported", "not-supported", "inconclusive")

GRID_CAVEAT = (
    "Limits in t and x are replaced by min/max over a finite grid after a burn-in; "
    "these summaries are numerical diagnostics, not proofs."
)
EXACT_CAVEAT = (
    "Exact finite-chain limits computed from the limiting matrix power; "
    "verdicts are exact up to floating-point tolerance."
)
BINNED_TV_CAVEAT = (
    "Total variation is estimated by binned TV, a lower-bound proxy for the "
    "supremum over all bounded measurable f."
)


@dataclass
class PointEstimate:
    """One grid cell: the estimate and its confidence interval."""

    x: float
    t: float
    value: float
    ci_low: float
    ci_high: float

    def as_dict(self):
        return {"x": self.x, "t": self.t, "value": self.value,
                "ci_low": self.ci_low, "ci_high": self.ci_high}


@dataclass
class CriterionReport:
    condition: str
    z: float
    eps: float | None
    x_grid: list
    t_grid: list
    points: list = field(default_factory=list)
    per_x: list = field(default_factory=list)
    summary: float = math.nan
    summary_ci: tuple = (math.nan, math.nan)
    verdict: str = "inconclusive"
    caveat: str = GRID_CAVEAT
    flags: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.condition not in CONDITIONS:
            raise ValueError(f"unknown condition {self.condition!r}")
        if self.verdict not in VERDICTS:
            raise ValueError(f"unknown verdict {self.verdict!r}")
        if not self.caveat:
            raise ValueError("a criterion report must carry a caveat")

    @property
    def supported(self) -> bool:
        return self.verdict == "supported"

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "condition": self.condition,
            "z": self.z,
            "eps": self.eps,
            "x_grid": [float(v) for v in self.x_grid],
            "t_grid": [float(v) for v in self.t_grid],
            "points": [p.as_dict() for p in self.points],
            "per_x": [p.as_dict() for p in self.per_x],
            "summary": self.summary,
            "summary_ci": [self.summary_ci[0], self.summary_ci[1]],
            "verdict": self.verdict,
            "caveat": self.caveat,
            "flags": list(self.flags),
            "extra": self.extra,
        }

    def to_json(self) -> str:
        return dumps(self.to_dict())

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["x", "t", "value", "ci_low", "ci_high"])
        for p in self.points:
            w.writerow([fmt(p.x), fmt(p.t), fmt(p.value), fmt(p.ci_low), fmt(p.ci_high)])
        return buf.getvalue()


def fmt(v) -> str:
    """Float with 17 significant digits (round-trip exact)."""
    return format(float(v), ".17g")


def _clean(obj):
    # JSON has no NaN/inf; emit them as strings so files stay standard JSON
    if isinstance(obj, float):
        if math.isnan(obj) or math.isinf(obj):
            return repr(obj)
        return obj
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if hasattr(obj, "item"):
        return _clean(obj.item())
    return obj


def dumps(obj) -> str:
    return json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n"


def load_schema(name: str = "criterion_report") -> dict:
    text = resources.files("fellerlab").joinpath("schemas", f"{name}.schema.json").read_text()
    return json.loads(text)


def verdict_lower_bound(ci_low: float, estimate: float) -> str:
    """Verdict for a condition of the form ``quantity > 0``."""
    if ci_low > 0:
        return "supported"
    if estimate <= 0:
        return "not-supported"
    return "inconclusive"


def verdict_defect(ci_low: float, ci_high: float, tolerance: float) -> str:
    """Verdict for a condition of the form ``defect -> 0`` at a tolerance."""
    if ci_high < tolerance:
        return "supported"
    if ci_low > tolerance:
        return "not-supported"
    return "inconclusive"
