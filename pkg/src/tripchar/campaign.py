"""Multiple-trip-point characterization: one trip point per test, collected into a set."""

from __future__ import annotations

import csv
import io
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from .common import Objective
from .dut_sim import DeviceModel, measure as dut_measure
from .stimulus import TestStimulus
from .trip_search import NoCrossoverError, SearchConfig, SearchState, TripPointResult, run_search


class CampaignError(RuntimeError):
    pass


class FunctionalFailure(Exception):
    """Raised from inside a search when the device reports a functional fail."""


@dataclass
class CampaignEntry:
    stimulus_id: str
    result: TripPointResult
    stimulus: TestStimulus | None = None


@dataclass
class CharacterizationResult:
    entries: list[CampaignEntry]
    spec_value: float
    objective: Objective
    total_measurements: int
    non_converged: list[CampaignEntry] = field(default_factory=list)
    functional_fails: list[TestStimulus] = field(default_factory=list)
    reference_trip: float | None = None

    def dsv(self) -> list[float]:
        return [e.result.value for e in self.entries]

    def to_dict(self) -> dict:
        return {
            "spec_value": self.spec_value,
            "objective": self.objective.value,
            "reference_trip": self.reference_trip,
            "total_measurements": self.total_measurements,
            "entries": [
                {"stimulus_id": e.stimulus_id, **e.result.to_dict()} for e in self.entries
            ],
            "non_converged": [
                {"stimulus_id": e.stimulus_id, **e.result.to_dict()} for e in self.non_converged
            ],
            "functional_fail_archive": [s.to_dict() for s in self.functional_fails],
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["stimulus_id", "tpv", "measurements", "converged"])
        for e in self.entries + self.non_converged:
            w.writerow([e.stimulus_id, repr(e.result.value), e.result.measurements_used, e.result.converged])
        return buf.getvalue()


def probe_fn(model: DeviceModel, s: TestStimulus):
    def probe(p: float) -> bool:
        m = dut_measure(model, s, p)
        if m.functional_fail:
            raise FunctionalFailure(s.id)
        return m.passed

    return probe


def characterize_one(
    model: DeviceModel, s: TestStimulus, cfg: SearchConfig, strategy: str, state: SearchState
):
    """Search one test. Returns (kind, result, state) with kind in {"ok", "nonconv", "ffail"}."""
    calls = 0
    inner = probe_fn(model, s)

    def counted(p):
        nonlocal calls
        calls += 1
        return inner(p)

    try:
        res, new_state = run_search(strategy, counted, cfg, state)
    except FunctionalFailure:
        return "ffail", TripPointResult(float("nan"), calls, False, []), state
    except NoCrossoverError as exc:
        return "nonconv", TripPointResult(float("nan"), calls, False, exc.history), state
    return ("ok" if res.converged else "nonconv"), res, new_state


def run_campaign(
    model: DeviceModel,
    tests: list[TestStimulus],
    cfg: SearchConfig,
    strategy: str = "sutp",
    spec_value: float = 0.0,
    objective: Objective = Objective.MINIMIZE,
    state: SearchState = SearchState(),
    jobs: int = 1,
) -> CharacterizationResult:
    """Measure one trip point per test.

    With ``sutp`` the first converged test fixes the reference trip point and
    every later test starts from it. Tests that never converge are reported
    separately; functional-fail stimuli go to their own archive.
    """
    if not tests:
        raise CampaignError("campaign needs at least one test")
    outcomes: list = [None] * len(tests)
    start = 0
    if strategy == "sutp":
        # tests run in order until one establishes the reference trip
        while state.reference_trip is None and start < len(tests):
            outcomes[start] = characterize_one(model, tests[start], cfg, strategy, state)
            state = outcomes[start][2]
            start += 1
    anchor = state

    def work(i):
        return characterize_one(model, tests[i], cfg, strategy, anchor)

    rest = range(start, len(tests))
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as ex:
            for i, out in zip(rest, ex.map(work, rest)):
                outcomes[i] = out
    else:
        for i in rest:
            outcomes[i] = work(i)

    result = CharacterizationResult([], spec_value, objective, 0, reference_trip=anchor.reference_trip)
    for s, (kind, res, _) in zip(tests, outcomes):
        result.total_measurements += res.measurements_used
        if kind == "ok":
            result.entries.append(CampaignEntry(s.id, res, s))
        elif kind == "nonconv":
            result.non_converged.append(CampaignEntry(s.id, res, s))
        else:
            result.functional_fails.append(s)
    return result


def worst_trip(result: CharacterizationResult) -> tuple[str, float]:
    """Worst converged trip point; ties break by ascending stimulus id."""
    if not result.entries:
        raise CampaignError("no converged entries")
    sign = 1.0 if result.objective is Objective.MINIMIZE else -1.0
    best = min(result.entries, key=lambda e: (sign * e.result.value, e.stimulus_id))
    return best.stimulus_id, best.result.value
