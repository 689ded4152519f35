"""Run configuration: one JSON document holding every sub-config."""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping

from .common import Objective, parse_enum
from .dut_sim import ModelConfig
from .features import FeatureConfig
from .learner import NNConfig
from .optimizer import GaConfig
from .stimulus import GeneratorConfig
from .trip_search import STRATEGIES, SearchConfig


class ConfigError(ValueError):
    pass


# Default device: a T_DQ-like data-valid time in ns (smaller is worse, spec 20 ns).
# Most of the test dependence sits in the five test conditions; the bit-lane
# toggle terms add a weak pattern dependence.
_SPAN = 4.0  # ns of trip shift across each condition's full range

DEFAULTS: dict[str, Any] = {
    "root_seed": 1,
    # the simulated device instance; fixed while root_seed varies the methods
    "device_seed": 1,
    "strategy": "sutp",
    "objective": "Minimize",
    "spec": 20.0,
    "generator": {
        "word_width": 16,
        "min_len": 100,
        "max_len": 1000,
        "conditions": {
            "vdd": [1.6, 2.0],
            "temp": [-40.0, 125.0],
            "load": [5.0, 50.0],
            "slew": [0.1, 1.0],
            "duty": [0.4, 0.6],
        },
    },
    "features": {"hist_bins": 32},
    "model": {
        "base_trip": 9.7,
        "param_range": [10.0, 60.0],
        "orientation": "PassAboveFail",
        "noise_sigma": 0.05,
        "feature_weights": {"toggle[0]": -0.15, "toggle[4]": 0.15, "toggle[8]": -0.15, "toggle[12]": 0.15},
        "condition_sensitivities": {
            "vdd": _SPAN / 0.4,
            "temp": -_SPAN / 165.0,
            "load": -_SPAN / 45.0,
            "slew": -_SPAN / 0.9,
            "duty": _SPAN / 0.2,
        },
        "functional_fail": [],
    },
    "search": {
        "s1": 10.0,
        "s2": 60.0,
        "resolution": 0.5,
        "sf_base": 0.5,
        "orientation": "PassAboveFail",
        "max_measurements": 200,
    },
    "nn": {"max_epochs": 600, "target_error": 0.01},
    "ga": {},
    "compare": {"learn_fraction": 0.4},
    "shmoo": {"x": "T_DQ:15:45:0.5", "y": "vdd:1.6:2.0:0.02"},
    "paths": {"weights": "weights.json", "reports": "reports"},
}


def deep_merge(base: Mapping, over: Mapping) -> dict:
    out = copy.deepcopy(dict(base))
    for k, v in over.items():
        if isinstance(v, Mapping) and isinstance(out.get(k), Mapping) and k not in _LEAF_MAPS:
            out[k] = deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


# mappings that replace rather than merge
_LEAF_MAPS = {"conditions", "feature_weights", "condition_sensitivities"}


def apply_override(d: dict, assignment: str) -> None:
    """Apply ``a.b.c=value``; the value is parsed as JSON when possible."""
    if "=" not in assignment:
        raise ConfigError(f"--set expects key=value, got {assignment!r}")
    key, raw = assignment.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    parts = key.strip().split(".")
    node = d
    for p in parts[:-1]:
        if not isinstance(node.get(p), dict):
            node[p] = {}
        node = node[p]
    node[parts[-1]] = value


def config_hash(d: Mapping) -> str:
    d = copy.deepcopy(dict(d))
    conds = d.get("generator", {}).get("conditions")
    if isinstance(conds, Mapping):
        # condition order fixes the feature layout; keep it through sort_keys
        d["generator"]["conditions"] = [[k, *v] for k, v in conds.items()]
    canon = json.dumps(d, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


@dataclass
class RunConfig:
    raw: dict
    root_seed: int
    device_seed: int
    strategy: str
    objective: Objective
    spec: float
    generator: GeneratorConfig
    features: FeatureConfig
    model: ModelConfig
    search: SearchConfig
    nn: NNConfig
    ga: GaConfig
    learn_fraction: float
    shmoo_x: str
    shmoo_y: str
    weights_path: str
    reports_dir: str

    @property
    def hash(self) -> str:
        return config_hash(self.raw)

    @classmethod
    def from_dict(cls, d: Mapping) -> "RunConfig":
        unknown = set(d) - set(DEFAULTS)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        raw = deep_merge(DEFAULTS, d)
        try:
            gen = GeneratorConfig.from_dict(raw["generator"])
            features = FeatureConfig(gen, int(raw["features"]["hist_bins"]))
            strategy = raw["strategy"]
            if strategy not in STRATEGIES:
                raise ConfigError(f"strategy must be one of {STRATEGIES}, got {strategy!r}")
            lf = float(raw["compare"]["learn_fraction"])
            if not 0 < lf < 1:
                raise ConfigError("compare.learn_fraction must be in (0, 1)")
            return cls(
                raw=raw,
                root_seed=int(raw["root_seed"]),
                device_seed=int(raw["device_seed"]),
                strategy=strategy,
                objective=parse_enum(Objective, raw["objective"]),
                spec=float(raw["spec"]),
                generator=gen,
                features=features,
                model=ModelConfig.from_dict(raw["model"]),
                search=SearchConfig.from_dict(raw["search"]),
                nn=NNConfig.from_dict(raw["nn"]),
                ga=GaConfig.from_dict(raw["ga"]),
                learn_fraction=lf,
                shmoo_x=str(raw["shmoo"]["x"]),
                shmoo_y=str(raw["shmoo"]["y"]),
                weights_path=str(raw["paths"]["weights"]),
                reports_dir=str(raw["paths"]["reports"]),
            )
        except ConfigError:
            raise
        except (TypeError, ValueError, KeyError) as exc:
            raise ConfigError(f"invalid config: {exc}") from exc


def load_config(path: str | Path | None = None, overrides=(), seed: int | None = None) -> RunConfig:
    d: dict = {}
    if path is not None:
        p = Path(path)
        try:
            text = p.read_text()
        except OSError as exc:
            raise ConfigError(f"{p}: cannot read config: {exc.strerror}") from exc
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{p}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
        if not isinstance(d, dict):
            raise ConfigError(f"{p}:1:1: config must be a JSON object")
    for a in overrides:
        apply_override(d, a)
    if seed is not None:
        d["root_seed"] = seed
    return RunConfig.from_dict(d)
