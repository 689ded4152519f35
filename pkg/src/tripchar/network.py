"""One-hidden-layer logistic network trained by backpropagation on MSE."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


@dataclass
class Net:
    w1: np.ndarray  # (D, H)
    b1: np.ndarray  # (H,)
    w2: np.ndarray  # (H, K)
    b2: np.ndarray  # (K,)

    @classmethod
    def init(cls, n_in: int, n_hidden: int, n_out: int, rng: np.random.Generator) -> "Net":
        a1 = np.sqrt(6.0 / (n_in + n_hidden))
        a2 = np.sqrt(6.0 / (n_hidden + n_out))
        return cls(
            rng.uniform(-a1, a1, (n_in, n_hidden)),
            np.zeros(n_hidden),
            rng.uniform(-a2, a2, (n_hidden, n_out)),
            np.zeros(n_out),
        )

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.w1.shape[0], self.w1.shape[1], self.w2.shape[1]

    def params(self) -> list[np.ndarray]:
        return [self.w1, self.b1, self.w2, self.b2]

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        h = sigmoid(x @ self.w1 + self.b1)
        return h, sigmoid(h @ self.w2 + self.b2)

    def predict(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)[1]

    def loss(self, x: np.ndarray, y: np.ndarray) -> float:
        return float(np.mean((self.predict(x) - y) ** 2))

    def gradients(self, x: np.ndarray, y: np.ndarray) -> tuple[float, list[np.ndarray]]:
        """MSE loss and its gradient w.r.t. (w1, b1, w2, b2)."""
        h, out = self.forward(x)
        diff = out - y
        loss = float(np.mean(diff**2))
        d_out = 2.0 * diff / diff.size
        dz2 = d_out * out * (1.0 - out)
        dz1 = (dz2 @ self.w2.T) * h * (1.0 - h)
        return loss, [x.T @ dz1, dz1.sum(axis=0), h.T @ dz2, dz2.sum(axis=0)]

    def step(self, grads: list[np.ndarray], lr: float) -> None:
        for p, g in zip(self.params(), grads):
            p -= lr * g

    def to_dict(self) -> dict:
        return {"w1": self.w1.tolist(), "b1": self.b1.tolist(), "w2": self.w2.tolist(), "b2": self.b2.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Net":
        return cls(*(np.asarray(d[k], dtype=float) for k in ("w1", "b1", "w2", "b2")))
