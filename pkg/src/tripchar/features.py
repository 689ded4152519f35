"""Fixed-length feature map shared by the simulated device and the learner.

Layout of a feature vector (every entry in [0, 1]):

    [toggle rate per bit lane (W)] [hashed 2-gram histogram (H)] [normalized conditions (C)]
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .stimulus import GeneratorConfig, TestStimulus

_M1 = np.uint64(0xFF51AFD7ED558CCD)
_M2 = np.uint64(0xC4CEB9FE1A85EC53)
_S33 = np.uint64(33)


@dataclass(frozen=True)
class FeatureConfig:
    gen: GeneratorConfig = GeneratorConfig()
    hist_bins: int = 32

    @property
    def dim(self) -> int:
        return self.gen.word_width + self.hist_bins + len(self.gen.conditions)

    def names(self) -> list[str]:
        return (
            [f"toggle[{b}]" for b in range(self.gen.word_width)]
            + [f"bigram[{j}]" for j in range(self.hist_bins)]
            + [f"cond[{n}]" for n in self.gen.condition_names]
        )

    def index(self, name: str) -> int:
        return self.names().index(name)


def bigram_bins(pattern: np.ndarray, word_width: int, hist_bins: int) -> np.ndarray:
    """Bin index of each consecutive word pair (v_i, v_{i+1}), via a 64-bit finalizer mix."""
    p = pattern.astype(np.uint64)
    x = (p[:-1] << np.uint64(word_width)) | p[1:]
    x ^= x >> _S33
    x *= _M1
    x ^= x >> _S33
    x *= _M2
    x ^= x >> _S33
    return (x % np.uint64(hist_bins)).astype(np.int64)


def toggle_rates(pattern: np.ndarray, word_width: int) -> np.ndarray:
    n = len(pattern)
    if n < 2:
        return np.zeros(word_width)
    flips = (pattern[:-1] ^ pattern[1:]).astype(np.uint32)
    bits = (flips[:, None] >> np.arange(word_width, dtype=np.uint32)) & 1
    return bits.sum(axis=0) / (n - 1)


@lru_cache(maxsize=65536)
def _cached(s: TestStimulus, cfg: FeatureConfig) -> np.ndarray:
    gen = cfg.gen
    pat = s.pattern
    n = len(pat)
    toggles = toggle_rates(pat, gen.word_width)
    hist = np.zeros(cfg.hist_bins)
    if n >= 2:
        hist = np.bincount(bigram_bins(pat, gen.word_width, cfg.hist_bins), minlength=cfg.hist_bins) / (n - 1)
    conds = np.array(
        [(s.conditions[name] - lo) / (hi - lo) for name, lo, hi in gen.conditions], dtype=float
    )
    out = np.concatenate([toggles, hist, np.clip(conds, 0.0, 1.0)])
    out.setflags(write=False)
    return out


def extract_features(s: TestStimulus, cfg: FeatureConfig) -> np.ndarray:
    """Feature vector of ``s``; cached per (stimulus content, config) and read-only."""
    return _cached(s, cfg)


def feature_matrix(stimuli, cfg: FeatureConfig) -> np.ndarray:
    if not stimuli:
        return np.zeros((0, cfg.dim))
    return np.stack([extract_features(s, cfg) for s in stimuli])
