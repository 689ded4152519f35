"""Worst Case Ratio scoring and Pass/Weakness/Fail classification."""

from __future__ import annotations

import csv
import enum
import io
from dataclasses import dataclass
from typing import Iterable

from .common import Objective

PASS_LIMIT = 0.8
FAIL_LIMIT = 1.0


class WcrError(ValueError):
    pass


class Side(str, enum.Enum):
    """MaxSide scores against a maximum spec (|v/v_max|), MinSide against a minimum (|v_min/v|)."""

    MAX = "MaxSide"
    MIN = "MinSide"

    @classmethod
    def for_objective(cls, objective: Objective) -> "Side":
        return cls.MIN if objective is Objective.MINIMIZE else cls.MAX


class WcrClass(str, enum.Enum):
    PASS = "Pass"
    WEAKNESS = "Weakness"
    FAIL = "Fail"


def wcr_ratio(v_a: float, spec: float, side: Side) -> float:
    if spec == 0:
        raise WcrError("spec value must be non-zero")
    if side is Side.MAX:
        return abs(v_a / spec)
    if v_a == 0:
        raise WcrError("measured value must be non-zero for MinSide")
    return abs(spec / v_a)


def classify(ratio: float) -> WcrClass:
    if ratio < 0:
        raise WcrError(f"negative ratio {ratio}")
    if ratio <= PASS_LIMIT:
        return WcrClass.PASS
    if ratio <= FAIL_LIMIT:
        return WcrClass.WEAKNESS
    return WcrClass.FAIL


@dataclass(frozen=True)
class WcrRow:
    stimulus_id: str
    v_a: float
    ratio: float
    cls: WcrClass


@dataclass(frozen=True)
class WcrReport:
    per_test: tuple[WcrRow, ...]
    aggregate_wcr: float
    worst_stimulus: str
    spec: float
    side: Side

    def to_dict(self) -> dict:
        return {
            "spec": self.spec,
            "side": self.side.value,
            "aggregate_wcr": self.aggregate_wcr,
            "worst_stimulus": self.worst_stimulus,
            "per_test": [
                {"stimulus_id": r.stimulus_id, "v_a": r.v_a, "ratio": r.ratio, "class": r.cls.value}
                for r in self.per_test
            ],
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["stimulus_id", "v_a", "ratio", "class"])
        for r in self.per_test:
            w.writerow([r.stimulus_id, repr(r.v_a), repr(r.ratio), r.cls.value])
        return buf.getvalue()


def wcr_aggregate(values: Iterable[tuple[str, float]], spec: float, side: Side) -> WcrReport:
    """Score every test and take the largest ratio as the aggregate.

    The largest ratio is the worst case on both sides: for MinSide it
    belongs to the smallest measured value. Ties go to the earliest test.
    """
    rows = []
    for sid, v in values:
        r = wcr_ratio(v, spec, side)
        rows.append(WcrRow(sid, v, r, classify(r)))
    if not rows:
        raise WcrError("no values to aggregate")
    worst = max(rows, key=lambda r: r.ratio)
    return WcrReport(tuple(rows), worst.ratio, worst.stimulus_id, spec, side)
