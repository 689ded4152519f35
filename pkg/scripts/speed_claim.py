"""Measurement cost of search-until-trip vs binary search as the trip spread grows.

Trips are spread uniformly over ``k * sf_base`` around the reference; the cost
advantage shrinks as the spread widens.

    python3 scripts/speed_claim.py
"""

import numpy as np

from tripchar.campaign import run_campaign
from tripchar.common import Orientation
from tripchar.dut_sim import ModelConfig, new_model
from tripchar.features import FeatureConfig
from tripchar.stimulus import GeneratorConfig, generate_tests
from tripchar.trip_search import SearchConfig

GEN = GeneratorConfig(conditions=(("c", 0.0, 1.0),))
FEATS = FeatureConfig(GEN)


def main(n_tests=1000, sf=0.001):
    cfg = SearchConfig(80.0, 130.0, sf, sf, Orientation.PASS_BELOW_FAIL)
    tests = generate_tests(GEN, n_tests, np.random.default_rng(3))
    print(f"{'spread':>10} {'sutp':>8} {'binary':>8} {'ratio':>7}")
    for k in (2, 5, 10, 20, 50, 100, 200):
        m = new_model(
            ModelConfig(
                base_trip=100.0, param_range=(80.0, 130.0), orientation=Orientation.PASS_BELOW_FAIL,
                condition_sensitivities={"c": k * sf},
            ),
            1, FEATS,
        )
        a = run_campaign(m, tests, cfg, "sutp").total_measurements
        b = run_campaign(m, tests, cfg, "binary").total_measurements
        print(f"{k:>7}*sf {a:8d} {b:8d} {a / b:7.1%}")


if __name__ == "__main__":
    main()
