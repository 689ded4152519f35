import numpy as np
import pytest

from tripchar.common import Orientation
from tripchar.dut_sim import ModelConfig, new_model
from tripchar.features import FeatureConfig
from tripchar.stimulus import GeneratorConfig, TestStimulus
from tripchar.trip_search import SearchConfig

# filled by test_acceptance.py, printed at the end of the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


# one condition "c" in [0, 10]; trip = base + sens*c, so tests are dialed by c
MHZ_GEN = GeneratorConfig(conditions=(("c", 0.0, 10.0),))
MHZ_FEATURES = FeatureConfig(MHZ_GEN)


def mhz_model(base=100.0, sens=1.0, sigma=0.0, **kw):
    cfg = ModelConfig(
        base_trip=base,
        param_range=(80.0, 130.0),
        orientation=Orientation.PASS_BELOW_FAIL,
        noise_sigma=sigma,
        condition_sensitivities={"c": sens},
        **kw,
    )
    return new_model(cfg, 1, MHZ_FEATURES)


def mhz_search(res=1.0, sf=1.0, max_measurements=200):
    return SearchConfig(80.0, 130.0, res, sf, Orientation.PASS_BELOW_FAIL, max_measurements)


def dial(c: float, sid: str = "t", n: int = 100) -> TestStimulus:
    return TestStimulus(sid, np.zeros(n, dtype=np.uint32), {"c": c})


def step_oracle(t: float, orientation=Orientation.PASS_BELOW_FAIL):
    if orientation is Orientation.PASS_BELOW_FAIL:
        return lambda p: p <= t
    return lambda p: p >= t


class Counting:
    """Wraps a measure function and counts invocations."""

    def __init__(self, fn):
        self.fn = fn
        self.calls = 0
        self.points = []

    def __call__(self, p):
        self.calls += 1
        self.points.append(p)
        return self.fn(p)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
