"""Deterministic simulated device-under-test.

The device's trip point for a stimulus is linear in the shared feature vector
and in the raw test-condition values, clamped to the parameter range::

    trip(s) = clamp(base + w . phi(s) + sum_c sens[c] * cond_c, lo, hi)

Measurement noise is a hash-derived dither added to the threshold at each
probe point, so re-probing the same point always gives the same answer.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from functools import lru_cache
from statistics import NormalDist
from typing import Mapping, Sequence

import numpy as np

from .common import Objective, Orientation, parse_enum
from .features import FeatureConfig, extract_features
from .stimulus import TestStimulus

_STD_NORMAL = NormalDist()


class ModelError(ValueError):
    pass


class OutOfRangeError(ModelError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    base_trip: float = 35.0
    param_range: tuple[float, float] = (10.0, 60.0)
    orientation: Orientation = Orientation.PASS_ABOVE_FAIL
    noise_sigma: float = 0.0
    # list of D weights | {feature-name: weight} | {"random": scale}
    feature_weights: object = None
    condition_sensitivities: Mapping[str, float] = field(default_factory=dict)
    # each signature is a run of consecutive words; a pattern containing one is a functional fail
    functional_fail: tuple[tuple[int, ...], ...] = ()

    @classmethod
    def from_dict(cls, d: Mapping) -> "ModelConfig":
        d = dict(d)
        if "param_range" in d:
            d["param_range"] = tuple(float(v) for v in d["param_range"])
        if "orientation" in d:
            d["orientation"] = parse_enum(Orientation, d["orientation"])
        if "functional_fail" in d:
            d["functional_fail"] = tuple(tuple(int(w) for w in sig) for sig in d["functional_fail"])
        if "condition_sensitivities" in d:
            d["condition_sensitivities"] = {k: float(v) for k, v in d["condition_sensitivities"].items()}
        return cls(**d)

    def to_dict(self) -> dict:
        return {
            "base_trip": self.base_trip,
            "param_range": list(self.param_range),
            "orientation": self.orientation.value,
            "noise_sigma": self.noise_sigma,
            "feature_weights": self.feature_weights,
            "condition_sensitivities": dict(self.condition_sensitivities),
            "functional_fail": [list(sig) for sig in self.functional_fail],
        }


@dataclass(frozen=True, eq=False)
class DeviceModel:
    base_trip: float
    feature_weights: np.ndarray
    condition_sensitivities: Mapping[str, float]
    noise_sigma: float
    orientation: Orientation
    seed: int
    param_range: tuple[float, float]
    features: FeatureConfig
    functional_fail: tuple[tuple[int, ...], ...] = ()

    @property
    def lo(self) -> float:
        return self.param_range[0]

    @property
    def hi(self) -> float:
        return self.param_range[1]

    def fields(self) -> tuple:
        return (
            self.base_trip,
            tuple(self.feature_weights.tolist()),
            tuple(sorted(self.condition_sensitivities.items())),
            self.noise_sigma,
            self.orientation,
            self.seed,
            self.param_range,
            self.features,
            self.functional_fail,
        )

    def __eq__(self, other):
        if not isinstance(other, DeviceModel):
            return NotImplemented
        return self.fields() == other.fields()

    def __hash__(self):
        return hash(self.fields())


@dataclass(frozen=True)
class Measurement:
    stimulus_id: str
    param_point: float
    passed: bool
    functional_fail: bool = False


def _resolve_weights(spec, features: FeatureConfig, seed: int) -> np.ndarray:
    d = features.dim
    if spec is None:
        return np.zeros(d)
    if isinstance(spec, Mapping):
        if set(spec) == {"random"}:
            rng = np.random.default_rng([seed, 0x5747])
            return rng.normal(0.0, float(spec["random"]), size=d)
        w = np.zeros(d)
        names = features.names()
        for name, value in spec.items():
            if name not in names:
                raise ModelError(f"unknown feature name in weights: {name!r}")
            w[names.index(name)] = float(value)
        return w
    w = np.asarray(spec, dtype=float)
    if w.shape != (d,):
        raise ModelError(f"feature_weights must have length {d}, got {w.shape}")
    return w


def new_model(config: ModelConfig, seed: int, features: FeatureConfig | None = None) -> DeviceModel:
    features = features or FeatureConfig()
    lo, hi = config.param_range
    if not lo < hi:
        raise ModelError(f"invalid param_range [{lo}, {hi}]: need lo < hi")
    if config.noise_sigma < 0:
        raise ModelError(f"noise_sigma must be >= 0, got {config.noise_sigma}")
    conds = set(features.gen.condition_names)
    for name in config.condition_sensitivities:
        if name not in conds:
            raise ModelError(f"sensitivity for unknown condition {name!r}")
    w = _resolve_weights(config.feature_weights, features, seed)
    w.setflags(write=False)
    return DeviceModel(
        base_trip=float(config.base_trip),
        feature_weights=w,
        condition_sensitivities=dict(config.condition_sensitivities),
        noise_sigma=float(config.noise_sigma),
        orientation=config.orientation,
        seed=int(seed),
        param_range=(float(lo), float(hi)),
        features=features,
        functional_fail=tuple(config.functional_fail),
    )


def raw_trip(model: DeviceModel, s: TestStimulus) -> float:
    phi = extract_features(s, model.features)
    v = model.base_trip + float(np.dot(model.feature_weights, phi))
    for name, sens in model.condition_sensitivities.items():
        v += sens * s.conditions.get(name, 0.0)
    return v


def true_trip(model: DeviceModel, s: TestStimulus) -> float:
    """Ground-truth trip point of ``s`` (noise-free), clamped to the parameter range."""
    return min(max(raw_trip(model, s), model.lo), model.hi)


def is_functional_fail(model: DeviceModel, s: TestStimulus) -> bool:
    if not model.functional_fail:
        return False
    return _contains_signature(model.functional_fail, s)


@lru_cache(maxsize=16384)
def _contains_signature(signatures: tuple[tuple[int, ...], ...], s: TestStimulus) -> bool:
    pat = s.pattern.tolist()
    for sig in signatures:
        k = len(sig)
        sig = list(sig)
        if any(pat[i : i + k] == sig for i in range(len(pat) - k + 1)):
            return True
    return False


def dither(model: DeviceModel, s: TestStimulus, p: float) -> float:
    if model.noise_sigma == 0.0:
        return 0.0
    h = hashlib.blake2b(digest_size=8)
    h.update(struct.pack("<Q", model.seed & 0xFFFFFFFFFFFFFFFF))
    h.update(s.key.encode())
    h.update(struct.pack("<d", p))
    u = (int.from_bytes(h.digest(), "little") + 0.5) / 2.0**64
    return model.noise_sigma * _STD_NORMAL.inv_cdf(u)


def measure(model: DeviceModel, s: TestStimulus, p: float) -> Measurement:
    """One pass/fail probe of ``s`` at parameter value ``p``."""
    if not model.lo <= p <= model.hi:
        raise OutOfRangeError(f"probe {p} outside [{model.lo}, {model.hi}]")
    if is_functional_fail(model, s):
        return Measurement(s.id, p, False, True)
    t = true_trip(model, s) + dither(model, s, p)
    if model.orientation is Orientation.PASS_BELOW_FAIL:
        passed = p <= t
    else:
        passed = p >= t
    return Measurement(s.id, p, passed, False)


def default_universe(features: FeatureConfig) -> dict[str, tuple[float, float]]:
    """Box bounds for every feature plus the raw condition ranges."""
    u = {name: (0.0, 1.0) for name in features.names()}
    for name, lo, hi in features.gen.conditions:
        u[name] = (lo, hi)
    return u


def _objective_for(model: DeviceModel) -> Objective:
    # smaller-is-worse for PassAboveFail parameters (e.g. a data-valid time)
    return Objective.MINIMIZE if model.orientation is Orientation.PASS_ABOVE_FAIL else Objective.MAXIMIZE


def global_worst_case(
    model: DeviceModel,
    universe: Mapping[str, Sequence[float]] | None = None,
    objective: Objective | None = None,
) -> tuple[dict[str, float], float]:
    """Analytic extremal trip over a box universe, with a witness assignment.

    The witness maps each feature name (and each raw condition name) to the
    bound chosen for it. A normalized-condition feature and its raw condition
    move together, so their coefficients are combined before picking a side.
    """
    universe = default_universe(model.features) if universe is None else dict(universe)
    objective = objective or _objective_for(model)
    sign = -1.0 if objective is Objective.MINIMIZE else 1.0
    names = model.features.names()
    gen = model.features.gen
    missing = [n for n in names if n not in universe] + [n for n in gen.condition_names if n not in universe]
    if missing:
        raise ModelError(f"unbounded universe: no bounds for {missing}")

    witness: dict[str, float] = {}
    value = model.base_trip
    cond_feature = {f"cond[{n}]": n for n in gen.condition_names}
    for k, name in enumerate(names):
        if name in cond_feature:
            continue
        lo, hi = universe[name]
        w = float(model.feature_weights[k])
        x = hi if sign * w > 0 else lo
        witness[name] = x
        value += w * x
    for cname, clo, chi in gen.conditions:
        lo, hi = universe[cname]
        fname = f"cond[{cname}]"
        w_norm = float(model.feature_weights[names.index(fname)])
        sens = model.condition_sensitivities.get(cname, 0.0)
        coef = w_norm / (chi - clo) + sens
        x = hi if sign * coef > 0 else lo
        witness[cname] = x
        witness[fname] = min(max((x - clo) / (chi - clo), 0.0), 1.0)
        value += w_norm * witness[fname] + sens * x
    return witness, min(max(value, model.lo), model.hi)


def witness_stimulus(
    model: DeviceModel, witness: Mapping[str, float], length: int = 100, stimulus_id: str = "W0"
) -> TestStimulus:
    """Build a stimulus realizing a toggle/condition witness.

    Lanes with witness toggle rate 1 alternate every cycle, lanes with 0 stay
    constant. Only meaningful when bigram weights are zero, since the bigram
    histogram of the resulting pattern is not controlled.
    """
    gen = model.features.gen
    idx = np.arange(length)
    pattern = np.zeros(length, dtype=np.uint32)
    for b in range(gen.word_width):
        if witness.get(f"toggle[{b}]", 0.0) >= 0.5:
            pattern |= ((idx % 2).astype(np.uint32) << np.uint32(b))
    conds = {n: float(witness[n]) for n in gen.condition_names}
    return TestStimulus(stimulus_id, pattern, conds)
