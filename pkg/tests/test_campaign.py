import csv
import io
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import MHZ_GEN, dial, mhz_model, mhz_search
from tripchar.campaign import (
    CampaignEntry,
    CampaignError,
    CharacterizationResult,
    run_campaign,
    worst_trip,
)
from tripchar.common import Objective
from tripchar.dut_sim import true_trip
from tripchar.stimulus import TestStimulus, generate_tests
from tripchar.trip_search import SearchState, TripPointResult

CFG = mhz_search(res=1.0, sf=1.0)


def test_three_tests_sutp():
    m = mhz_model()  # trip = 100 + c
    tests = [dial(4.0, "a"), dial(6.0, "b"), dial(1.0, "c")]
    res = run_campaign(m, tests, CFG, "sutp")
    assert [true_trip(m, t) for t in tests] == [104.0, 106.0, 101.0]
    for v, expect in zip(res.dsv(), (104.0, 106.0, 101.0)):
        assert abs(v - expect) <= CFG.resolution
    used = [e.result.measurements_used for e in res.entries]
    assert used[1] < 6 and used[2] < 6
    assert res.reference_trip == res.entries[0].result.value
    assert res.total_measurements == sum(used)


def test_single_test():
    res = run_campaign(mhz_model(), [dial(3.0, "only")], CFG, "sutp")
    assert len(res.entries) == 1
    assert res.dsv() == [res.entries[0].result.value]


@pytest.mark.parametrize("strategy", ["linear", "binary", "sa", "sutp"])
def test_repeated_test_identical(strategy):
    s = dial(3.3, "x")
    res = run_campaign(mhz_model(), [s.renamed(f"x{i}") for i in range(5)], CFG, strategy)
    assert len(set(res.dsv())) == 1


def test_empty_campaign():
    with pytest.raises(CampaignError):
        run_campaign(mhz_model(), [], CFG)


def _result(values, objective=Objective.MINIMIZE, ids=None):
    ids = ids or [f"T{i}" for i in range(len(values))]
    entries = [CampaignEntry(i, TripPointResult(v, 1, True)) for i, v in zip(ids, values)]
    return CharacterizationResult(entries, 20.0, objective, len(values))


def test_worst_trip_table_values():
    assert worst_trip(_result([32.3, 28.5, 22.1])) == ("T2", 22.1)
    assert worst_trip(_result([32.3, 28.5, 22.1], Objective.MAXIMIZE)) == ("T0", 32.3)


def test_worst_trip_single_and_ties():
    assert worst_trip(_result([7.5])) == ("T0", 7.5)
    assert worst_trip(_result([5, 5, 5], ids=["c", "a", "b"])) == ("a", 5)


def test_worst_trip_requires_converged():
    with pytest.raises(CampaignError):
        worst_trip(_result([]))


def test_accounting():
    m = mhz_model(functional_fail=((9, 9),))
    ok = [dial(c, f"ok{i}") for i, c in enumerate((1.0, 2.0, 3.0))]
    ffail = TestStimulus("ff", np.array([0, 9, 9] + [0] * 97, dtype=np.uint32), {"c": 1.0})
    # base 100 + 10*c puts trips at or beyond s2 for c >= 3: no crossover
    tests = ok + [ffail]
    m2 = mhz_model(base=100.0, sens=12.0, functional_fail=((9, 9),))
    res = run_campaign(m2, tests, CFG, "binary")
    assert len(res.entries) + len(res.non_converged) + len(res.functional_fails) == len(tests)
    assert [e.stimulus_id for e in res.non_converged] == ["ok2"]
    assert res.functional_fails == [ffail]
    # every test's measurements count towards the total, including failed ones
    assert res.total_measurements == sum(
        e.result.measurements_used for e in res.entries + res.non_converged
    ) + 1
    res = run_campaign(m, tests, CFG, "sutp")
    assert len(res.entries) == 3 and len(res.functional_fails) == 1


def test_sutp_skips_nonconverged_for_rtp():
    m = mhz_model(base=100.0, sens=12.0)
    tests = [dial(5.0, "hi"), dial(1.0, "a"), dial(2.0, "b")]
    res = run_campaign(m, tests, CFG, "sutp")
    assert [e.stimulus_id for e in res.non_converged] == ["hi"]
    assert res.reference_trip == res.entries[0].result.value


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31), strategy=st.sampled_from(["linear", "binary", "sa", "sutp"]))
def test_noiseless_dsv_matches_true_trip(seed, strategy):
    m = mhz_model(base=95.0, sens=2.0)
    tests = generate_tests(MHZ_GEN, 20, np.random.default_rng(seed))
    res = run_campaign(m, tests, CFG, strategy)
    assert len(res.entries) == 20
    for e, s in zip(res.entries, tests):
        assert e.stimulus_id == s.id
        tol = CFG.sf_base if strategy == "sutp" else CFG.resolution
        assert abs(e.result.value - true_trip(m, s)) <= tol


def test_sutp_cheaper_when_trips_near_rtp():
    cfg = mhz_search(res=0.5, sf=0.5)
    reach = cfg.sf_base * math.log2(cfg.cr / cfg.resolution)
    m = mhz_model(base=100.0, sens=reach / 2 / 10.0)  # trips span reach/2 over c in [0, 10]
    tests = generate_tests(MHZ_GEN, 200, np.random.default_rng(5))
    sutp = run_campaign(m, tests, cfg, "sutp")
    binary = run_campaign(m, tests, cfg, "binary")
    assert sutp.total_measurements < binary.total_measurements
    assert np.allclose(sutp.dsv(), binary.dsv(), atol=cfg.resolution)


def test_parallel_matches_serial():
    m = mhz_model(base=95.0, sens=2.0)
    tests = generate_tests(MHZ_GEN, 40, np.random.default_rng(6))
    a = run_campaign(m, tests, CFG, "sutp", jobs=1)
    b = run_campaign(m, tests, CFG, "sutp", jobs=4)
    assert a.to_dict() == b.to_dict()


def test_fixed_state_is_reused():
    m = mhz_model()
    res = run_campaign(m, [dial(4.0, "a")], CFG, "sutp", state=SearchState(104.0))
    assert res.entries[0].result.measurements_used == 2
    assert res.reference_trip == 104.0


def test_exports():
    m = mhz_model()
    res = run_campaign(m, [dial(4.0, "a"), dial(6.0, "b")], CFG, "sutp", 100.0, Objective.MAXIMIZE)
    doc = res.to_dict()
    assert doc["total_measurements"] == res.total_measurements
    assert [e["stimulus_id"] for e in doc["entries"]] == ["a", "b"]
    rows = list(csv.reader(io.StringIO(res.to_csv())))
    assert rows[0] == ["stimulus_id", "tpv", "measurements", "converged"]
    assert float(rows[2][1]) == res.entries[1].result.value
