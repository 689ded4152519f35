"""Triangular fuzzy partition of the unit interval."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class FuzzyEncoding:
    k: int = 5

    def __post_init__(self):
        if self.k < 2:
            raise ValueError("need at least 2 fuzzy sets")

    @property
    def centers(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.k)

    def memberships(self, u) -> np.ndarray:
        """Membership of each u (scalar or 1-D array) in every set; rows sum to exactly 1."""
        u = np.clip(np.atleast_1d(np.asarray(u, dtype=float)), 0.0, 1.0)
        step = 1.0 / (self.k - 1)
        j = np.minimum((u / step).astype(int), self.k - 2)
        right = (u - j * step) / step
        right = np.clip(right, 0.0, 1.0)
        left = 1.0 - right
        out = np.zeros((len(u), self.k))
        rows = np.arange(len(u))
        out[rows, j] = left
        out[rows, j + 1] += right
        return out

    def decode(self, m: np.ndarray) -> np.ndarray:
        """Centroid of membership rows, back on the unit interval."""
        m = np.atleast_2d(m)
        return (m @ self.centers) / m.sum(axis=1)


def normalize(tpv, norm: tuple[float, float]) -> np.ndarray:
    lo, hi = norm
    if not lo < hi:
        raise ValueError(f"degenerate normalization range [{lo}, {hi}]")
    return np.clip((np.asarray(tpv, dtype=float) - lo) / (hi - lo), 0.0, 1.0)


def fuzzy_encode(tpv: float, norm: tuple[float, float], enc: FuzzyEncoding) -> np.ndarray:
    return enc.memberships(normalize(tpv, norm))[0]
