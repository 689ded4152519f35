"""Trip-point search strategies.

Every search takes a ``measure(p) -> bool`` callable (True = device passes at
parameter value ``p``) and reports the trip point as a passing value: the
last passing probe before the device starts failing, or the first passing
probe when coming from the failing side.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping

from .common import Orientation, parse_enum

MeasureFn = Callable[[float], bool]

STRATEGIES = ("linear", "binary", "sa", "sutp")

_EPS = 1e-9


class SearchError(RuntimeError):
    pass


class NoCrossoverError(SearchError):
    """Both search boundaries gave the same pass/fail result."""

    def __init__(self, message: str, history=()):
        super().__init__(message)
        self.history = list(history)


@dataclass(frozen=True)
class SearchConfig:
    s1: float
    s2: float
    resolution: float
    sf_base: float
    orientation: Orientation = Orientation.PASS_BELOW_FAIL
    max_measurements: int = 200

    def __post_init__(self):
        if not self.s1 < self.s2:
            raise ValueError(f"need s1 < s2, got [{self.s1}, {self.s2}]")
        if not self.resolution > 0:
            raise ValueError("resolution must be > 0")
        if not self.sf_base >= self.resolution:
            raise ValueError("sf_base must be >= resolution")
        if self.max_measurements < 1:
            raise ValueError("max_measurements must be >= 1")
        object.__setattr__(self, "orientation", parse_enum(Orientation, self.orientation))

    @property
    def cr(self) -> float:
        return self.s2 - self.s1

    def clamp(self, p: float) -> float:
        return min(max(p, self.s1), self.s2)

    def binary_bound(self) -> int:
        """Worst-case probe count of a plain binary search."""
        return 2 + max(0, math.ceil(math.log2(self.cr / self.resolution) - _EPS))

    @classmethod
    def from_dict(cls, d: Mapping) -> "SearchConfig":
        return cls(**dict(d))

    def to_dict(self) -> dict:
        return {
            "s1": self.s1,
            "s2": self.s2,
            "resolution": self.resolution,
            "sf_base": self.sf_base,
            "orientation": self.orientation.value,
            "max_measurements": self.max_measurements,
        }


@dataclass(frozen=True)
class SearchState:
    reference_trip: float | None = None
    iteration: int = 0


@dataclass
class TripPointResult:
    value: float
    measurements_used: int
    converged: bool
    history: list[tuple[float, bool]] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "value": self.value,
            "measurements_used": self.measurements_used,
            "converged": self.converged,
        }


class _Exhausted(Exception):
    pass


class _Prober:
    """Counts and records every probe; raises once the budget is spent."""

    def __init__(self, measure: MeasureFn, budget: int):
        self.measure = measure
        self.budget = budget
        self.history: list[tuple[float, bool]] = []
        self.best: float | None = None

    def __call__(self, p: float) -> bool:
        if len(self.history) >= self.budget:
            raise _Exhausted
        r = bool(self.measure(p))
        self.history.append((p, r))
        if r:
            self.best = p
        return r

    def result(self, value: float, converged: bool = True) -> TripPointResult:
        return TripPointResult(value, len(self.history), converged, list(self.history))

    def exhausted(self, fallback: float) -> TripPointResult:
        return self.result(self.best if self.best is not None else fallback, converged=False)


def linear_search(measure: MeasureFn, cfg: SearchConfig) -> TripPointResult:
    """Step from s1 towards s2 at ``resolution`` until the pass/fail state changes."""
    pr = _Prober(measure, cfg.max_measurements)
    n = int(math.floor(cfg.cr / cfg.resolution + _EPS))
    points = [cfg.s1 + i * cfg.resolution for i in range(n + 1)]
    if points[-1] < cfg.s2 - _EPS:
        points.append(cfg.s2)
    try:
        prev_p = points[0]
        prev = pr(prev_p)
        for p in points[1:]:
            r = pr(p)
            if r != prev:
                return pr.result(prev_p if prev else p)
            prev, prev_p = r, p
    except _Exhausted:
        return pr.exhausted(cfg.s1)
    return pr.result(pr.best if pr.best is not None else cfg.s2, converged=False)


def _endpoints(pr: _Prober, cfg: SearchConfig) -> tuple[float, float]:
    r1 = pr(cfg.s1)
    r2 = pr(cfg.s2)
    if r1 == r2:
        state = "pass" if r1 else "fail"
        raise NoCrossoverError(f"both boundaries {state} on [{cfg.s1}, {cfg.s2}]", pr.history)
    return (cfg.s1, cfg.s2) if r1 else (cfg.s2, cfg.s1)


def _bisect(pr: _Prober, cfg: SearchConfig) -> float:
    pass_pt, fail_pt = _endpoints(pr, cfg)
    while abs(fail_pt - pass_pt) > cfg.resolution + _EPS:
        mid = 0.5 * (pass_pt + fail_pt)
        if pr(mid):
            pass_pt = mid
        else:
            fail_pt = mid
    return pass_pt


def binary_search(measure: MeasureFn, cfg: SearchConfig) -> TripPointResult:
    """Halve the pass/fail bracket until it is no wider than ``resolution``."""
    pr = _Prober(measure, cfg.max_measurements)
    try:
        return pr.result(_bisect(pr, cfg))
    except _Exhausted:
        return pr.exhausted(cfg.s1)


def _successive(pr: _Prober, cfg: SearchConfig) -> float:
    pass_pt, fail_pt = _endpoints(pr, cfg)
    last_moved = None
    while abs(fail_pt - pass_pt) > cfg.resolution + _EPS:
        mid = 0.5 * (pass_pt + fail_pt)
        passed = pr(mid)
        if passed:
            pass_pt = mid
        else:
            fail_pt = mid
        moved = "pass" if passed else "fail"
        if last_moved is not None and moved != last_moved:
            width = abs(fail_pt - pass_pt)
            if moved == "pass":
                # the fail endpoint was decided last step; confirm it still fails
                if pr(fail_pt):
                    pass_pt, fail_pt = _expand(pr, cfg, fail_pt, fail_pt - pass_pt, width, want=False)
                    moved = None
            else:
                if not pr(pass_pt):
                    fail_pt, pass_pt = _expand(pr, cfg, pass_pt, pass_pt - fail_pt, width, want=True)
                    moved = None
        last_moved = moved
    return pass_pt


def _expand(pr: _Prober, cfg: SearchConfig, anchor: float, direction: float, width: float, want: bool):
    """Re-open the bracket beyond ``anchor`` (whose result just flipped).

    Steps outward by twice the current width, doubling until a probe gives
    ``want``; returns (new endpoint on the ``not want`` side, endpoint with ``want``).
    """
    sign = 1.0 if direction > 0 else -1.0
    inner = anchor
    step = 2.0 * width
    while True:
        cand = cfg.clamp(inner + sign * step)
        if pr(cand) == want:
            return inner, cand
        if cand in (cfg.s1, cfg.s2):
            raise NoCrossoverError("parameter drifted beyond the search range", pr.history)
        inner = cand
        step *= 2.0


def successive_approximation(measure: MeasureFn, cfg: SearchConfig) -> TripPointResult:
    """Bisection with drift sensing.

    Each time the bracketing direction flips, the endpoint decided on the
    previous step is measured again. If it no longer gives the recorded
    result, the parameter has drifted: the bracket is re-opened on that side
    and the search continues from there.
    """
    pr = _Prober(measure, cfg.max_measurements)
    try:
        return pr.result(_successive(pr, cfg))
    except _Exhausted:
        return pr.exhausted(cfg.s1)


def search_until_trip(
    measure: MeasureFn, cfg: SearchConfig, state: SearchState = SearchState()
) -> tuple[TripPointResult, SearchState]:
    """Search-until-trip-point.

    The first test (no reference trip yet) runs a full-range successive
    approximation and its result becomes the reference trip point RTP.
    Later tests probe RTP and then step away from it by cumulative offsets
    ``sf_base * IT`` (IT = 1, 2, ...) until the result flips. The step
    direction follows from the first probe and the orientation: with the pass
    region below the fail region a pass steps upward and a fail downward;
    the other orientation mirrors this. Reaching a range boundary without a
    flip falls back to a full-range successive approximation.
    """
    pr = _Prober(measure, cfg.max_measurements)
    rtp = state.reference_trip
    if rtp is None:
        try:
            res = pr.result(_successive(pr, cfg))
        except _Exhausted:
            return pr.exhausted(cfg.s1), state
        return res, SearchState(res.value, 0)

    rtp = cfg.clamp(rtp)
    it = 0
    try:
        first = pr(rtp)
        upward = first == (cfg.orientation is Orientation.PASS_BELOW_FAIL)
        sign = 1.0 if upward else -1.0
        last_pass = rtp if first else None
        while True:
            it += 1
            p = cfg.clamp(rtp + sign * cfg.sf_base * it)
            r = pr(p)
            if r != first:
                value = last_pass if first else p
                return pr.result(value), replace(state, iteration=it)
            if r:
                last_pass = p
            if p in (cfg.s1, cfg.s2):
                return pr.result(_successive(pr, cfg)), replace(state, iteration=it)
    except _Exhausted:
        return pr.exhausted(rtp), replace(state, iteration=it)


def run_search(
    strategy: str, measure: MeasureFn, cfg: SearchConfig, state: SearchState = SearchState()
) -> tuple[TripPointResult, SearchState]:
    """Dispatch by strategy name; non-``sutp`` strategies pass ``state`` through."""
    if strategy == "sutp":
        return search_until_trip(measure, cfg, state)
    fn = {"linear": linear_search, "binary": binary_search, "sa": successive_approximation}.get(strategy)
    if fn is None:
        raise ValueError(f"unknown strategy {strategy!r}; expected one of {STRATEGIES}")
    return fn(measure, cfg), state


def history_csv_rows(result: TripPointResult) -> list[tuple[int, float, bool]]:
    return [(i, p, passed) for i, (p, passed) in enumerate(result.history)]
