"""Test stimuli: vector-cycle patterns plus named test conditions."""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from functools import cached_property
from typing import Mapping

import numpy as np

MIN_CYCLES = 100
MAX_CYCLES = 1000


class StimulusError(ValueError):
    pass


@dataclass(frozen=True)
class GeneratorConfig:
    """Bounds for random test generation.

    ``conditions`` maps a condition name to its ``(lo, hi)`` range; order is
    significant because it fixes the condition block of the feature vector.
    """

    word_width: int = 16
    min_len: int = MIN_CYCLES
    max_len: int = MAX_CYCLES
    conditions: tuple[tuple[str, float, float], ...] = (("vdd", 1.6, 2.0),)

    def __post_init__(self):
        if not 1 <= self.word_width <= 32:
            raise StimulusError(f"word_width must be in [1, 32], got {self.word_width}")
        if not MIN_CYCLES <= self.min_len <= self.max_len <= MAX_CYCLES:
            raise StimulusError(
                f"pattern length bounds must satisfy {MIN_CYCLES} <= min_len <= max_len <= {MAX_CYCLES}"
            )
        names = [c[0] for c in self.conditions]
        if len(set(names)) != len(names):
            raise StimulusError("duplicate condition names")
        for name, lo, hi in self.conditions:
            if not lo < hi:
                raise StimulusError(f"condition {name!r}: need lo < hi, got [{lo}, {hi}]")

    @classmethod
    def from_dict(cls, d: Mapping) -> "GeneratorConfig":
        d = dict(d)
        conds = d.pop("conditions", None)
        if isinstance(conds, Mapping):
            conds = [(k, *v) for k, v in conds.items()]
        if conds is not None:
            d["conditions"] = tuple((str(n), float(lo), float(hi)) for n, lo, hi in conds)
        return cls(**d)

    def to_dict(self) -> dict:
        return {
            "word_width": self.word_width,
            "min_len": self.min_len,
            "max_len": self.max_len,
            # a list, not a mapping: order fixes the feature layout and must
            # survive sort_keys serialization
            "conditions": [[n, lo, hi] for n, lo, hi in self.conditions],
        }

    @property
    def condition_names(self) -> tuple[str, ...]:
        return tuple(c[0] for c in self.conditions)

    def condition_range(self, name: str) -> tuple[float, float]:
        for n, lo, hi in self.conditions:
            if n == name:
                return lo, hi
        raise KeyError(name)

    def nominal_conditions(self) -> dict[str, float]:
        return {n: 0.5 * (lo + hi) for n, lo, hi in self.conditions}


@dataclass(frozen=True, eq=False)
class TestStimulus:
    """One characterization test.

    Equality and hashing go by content (pattern words and conditions), not
    by ``id``: two stimuli with the same content are the same test.
    """

    __test__ = False  # keep pytest from collecting this class

    id: str
    pattern: np.ndarray
    conditions: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        pat = np.array(self.pattern, dtype=np.uint32)
        if pat.ndim != 1:
            raise StimulusError("pattern must be one-dimensional")
        pat.setflags(write=False)
        object.__setattr__(self, "pattern", pat)
        object.__setattr__(self, "conditions", {k: float(v) for k, v in self.conditions.items()})

    def __len__(self) -> int:
        return len(self.pattern)

    @cached_property
    def key(self) -> str:
        h = hashlib.blake2b(digest_size=16)
        h.update(self.pattern.astype("<u4").tobytes())
        for name in sorted(self.conditions):
            h.update(name.encode())
            h.update(struct.pack("<d", self.conditions[name]))
        return h.hexdigest()

    def __eq__(self, other):
        if not isinstance(other, TestStimulus):
            return NotImplemented
        return self.key == other.key

    def __hash__(self):
        return hash(self.key)

    def with_conditions(self, stimulus_id: str | None = None, **overrides: float) -> "TestStimulus":
        conds = dict(self.conditions)
        conds.update(overrides)
        return TestStimulus(stimulus_id or self.id, self.pattern, conds)

    def renamed(self, stimulus_id: str) -> "TestStimulus":
        return TestStimulus(stimulus_id, self.pattern, self.conditions)

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "pattern": self.pattern.astype(">u4").tobytes().hex(),
            "conditions": dict(self.conditions),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "TestStimulus":
        pat = d["pattern"]
        if isinstance(pat, str):
            pat = np.frombuffer(bytes.fromhex(pat), dtype=">u4")
        return cls(str(d["id"]), np.asarray(pat, dtype=np.uint32), d.get("conditions", {}))


def validate(s: TestStimulus, gen_cfg: GeneratorConfig) -> None:
    """Raise StimulusError unless ``s`` satisfies the run's stimulus bounds."""
    n = len(s.pattern)
    if not gen_cfg.min_len <= n <= gen_cfg.max_len:
        raise StimulusError(f"{s.id}: pattern length {n} outside [{gen_cfg.min_len}, {gen_cfg.max_len}]")
    if n and int(s.pattern.max()) >> gen_cfg.word_width:
        raise StimulusError(f"{s.id}: vector word wider than {gen_cfg.word_width} bits")
    for name, lo, hi in gen_cfg.conditions:
        if name not in s.conditions:
            raise StimulusError(f"{s.id}: missing condition {name!r}")
        if not lo <= s.conditions[name] <= hi:
            raise StimulusError(f"{s.id}: condition {name}={s.conditions[name]} outside [{lo}, {hi}]")


def random_words(rng: np.random.Generator, n: int, word_width: int) -> np.ndarray:
    return rng.integers(0, 1 << word_width, size=n, dtype=np.uint64).astype(np.uint32)


def generate_random_test(
    gen_cfg: GeneratorConfig, rng: np.random.Generator, stimulus_id: str | None = None
) -> TestStimulus:
    """Draw one random test: uniform length, uniform words, uniform conditions."""
    n = int(rng.integers(gen_cfg.min_len, gen_cfg.max_len + 1))
    pattern = random_words(rng, n, gen_cfg.word_width)
    conds = {name: float(rng.uniform(lo, hi)) for name, lo, hi in gen_cfg.conditions}
    s = TestStimulus(stimulus_id or "", pattern, conds)
    if stimulus_id is None:
        s = s.renamed("r" + s.key[:12])
    return s


def generate_tests(
    gen_cfg: GeneratorConfig, n: int, rng: np.random.Generator, prefix: str = "T"
) -> list[TestStimulus]:
    width = max(5, len(str(n)))
    return [generate_random_test(gen_cfg, rng, f"{prefix}{i:0{width}d}") for i in range(n)]


def march_patterns(gen_cfg: GeneratorConfig, length: int = 512) -> list[TestStimulus]:
    """Fixed pre-defined test set: solid, checkerboard and walking patterns at nominal conditions."""
    w = gen_cfg.word_width
    full = (1 << w) - 1
    alt = int("01" * 16, 2) & full
    idx = np.arange(length)
    walking = (np.uint64(1) << (idx % w).astype(np.uint64)).astype(np.uint32)
    shapes = {
        "solid0": np.zeros(length, dtype=np.uint32),
        "solid1": np.full(length, full, dtype=np.uint32),
        "checker": np.where(idx % 2 == 0, alt, full ^ alt).astype(np.uint32),
        "rowstripe": np.where((idx // 2) % 2 == 0, 0, full).astype(np.uint32),
        "walk1": walking,
        "walk0": (full ^ walking).astype(np.uint32),
        "march": np.concatenate(
            [np.zeros(length // 4), np.full(length // 4, full), np.zeros(length // 4), np.full(length - 3 * (length // 4), full)]
        ).astype(np.uint32),
    }
    nominal = gen_cfg.nominal_conditions()
    return [TestStimulus(f"M{i:02d}_{name}", pat, nominal) for i, (name, pat) in enumerate(shapes.items())]
