"""Voting ensemble of small networks that learns stimulus -> trip-point class.

Each network is trained on its own random subset of the measured tests and
validated on the rest. At prediction time the networks vote: the class
distribution is the mean of their normalized outputs, and the confidence
falls as the networks disagree.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .common import Objective
from .features import FeatureConfig, feature_matrix
from .fuzzy import FuzzyEncoding, normalize
from .network import Net
from .stimulus import GeneratorConfig, TestStimulus, generate_random_test

WEIGHT_FILE_VERSION = "1"


class LearnerError(RuntimeError):
    pass


class InsufficientDataError(LearnerError):
    pass


class NonFiniteLossError(LearnerError):
    pass


class WeightFileError(LearnerError):
    pass


class VersionMismatchError(WeightFileError):
    pass


class ShapeMismatchError(LearnerError):
    pass


@dataclass(frozen=True)
class NNConfig:
    n_nets: int = 5
    hidden: int = 16
    k: int = 5
    coding: str = "fuzzy"  # "fuzzy" | "numeric"
    subset_fraction: float = 0.8
    learning_rate: float = 2.0
    batch_size: int | None = 32  # None: full-batch gradient descent
    max_epochs: int = 2000
    target_error: float = 1e-3
    min_samples: int = 200
    norm: str = "data"  # "data": observed tpv range | "range": explicit norm_range
    norm_range: tuple[float, float] | None = None
    pool_factor: int = 20

    def __post_init__(self):
        if self.coding not in ("fuzzy", "numeric"):
            raise ValueError(f"coding must be 'fuzzy' or 'numeric', got {self.coding!r}")
        if self.norm not in ("data", "range"):
            raise ValueError(f"norm must be 'data' or 'range', got {self.norm!r}")
        if self.norm == "range" and self.norm_range is None:
            raise ValueError("norm='range' needs norm_range")
        if not 0 < self.subset_fraction < 1:
            raise ValueError("subset_fraction must be in (0, 1)")

    @classmethod
    def from_dict(cls, d: Mapping) -> "NNConfig":
        d = dict(d)
        if d.get("norm_range") is not None:
            d["norm_range"] = tuple(float(v) for v in d["norm_range"])
        return cls(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        if d["norm_range"] is not None:
            d["norm_range"] = list(d["norm_range"])
        return d


@dataclass
class NNEnsemble:
    nets: list[Net]
    encoding: FuzzyEncoding
    norm: tuple[float, float]
    features: FeatureConfig
    coding: str = "fuzzy"
    subsets: list[dict] = field(default_factory=list)
    x_mean: np.ndarray | None = None
    x_scale: np.ndarray | None = None
    version: str = WEIGHT_FILE_VERSION

    def scale_inputs(self, x: np.ndarray) -> np.ndarray:
        if self.x_mean is None:
            return x
        return (x - self.x_mean) / self.x_scale

    @property
    def n_outputs(self) -> int:
        return self.encoding.k if self.coding == "fuzzy" else 1

    def encode_targets(self, tpv: np.ndarray) -> np.ndarray:
        u = normalize(tpv, self.norm)
        if self.coding == "fuzzy":
            return self.encoding.memberships(u)
        return u[:, None]


@dataclass
class TrainingLog:
    rows: list[tuple[int, int, float, float]] = field(default_factory=list)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["net_id", "epoch", "train_mse", "val_mse"])
        for r in self.rows:
            w.writerow([r[0], r[1], repr(r[2]), repr(r[3])])
        return buf.getvalue()


def _train_net(net, x, y, xv, yv, cfg: NNConfig, rng, net_id: int, log: TrainingLog) -> tuple[float, float]:
    n = len(x)
    batch = n if cfg.batch_size is None else min(cfg.batch_size, n)
    train_mse = val_mse = float("inf")
    best = (float("inf"), None, None)
    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(n) if batch < n else np.arange(n)
        for start in range(0, n, batch):
            idx = order[start : start + batch]
            loss, grads = net.gradients(x[idx], y[idx])
            if not np.isfinite(loss):
                raise NonFiniteLossError(f"net {net_id}: non-finite loss at epoch {epoch}; lower the learning rate")
            net.step(grads, cfg.learning_rate)
        train_mse = net.loss(x, y)
        val_mse = net.loss(xv, yv) if len(xv) else train_mse
        if not (np.isfinite(train_mse) and np.isfinite(val_mse)):
            raise NonFiniteLossError(f"net {net_id}: non-finite loss at epoch {epoch}; lower the learning rate")
        log.rows.append((net_id, epoch, train_mse, val_mse))
        if val_mse < best[0]:
            best = (val_mse, train_mse, [p.copy() for p in net.params()])
        if val_mse <= cfg.target_error:
            break
    # keep the weights of the epoch with the lowest validation error
    if best[2] is not None:
        for p, q in zip(net.params(), best[2]):
            p[...] = q
        val_mse, train_mse = best[0], best[1]
    return train_mse, val_mse


def train_ensemble(
    data: Sequence[tuple[TestStimulus, float]],
    cfg: NNConfig,
    features: FeatureConfig,
    rng: np.random.Generator,
    log: TrainingLog | None = None,
) -> NNEnsemble:
    """Train ``cfg.n_nets`` networks, each on an independent random subset."""
    if len(data) < cfg.min_samples:
        raise InsufficientDataError(f"need at least {cfg.min_samples} samples, got {len(data)}")
    tpv = np.array([t for _, t in data], dtype=float)
    if not np.all(np.isfinite(tpv)):
        raise LearnerError("trip-point values must be finite")
    x = feature_matrix([s for s, _ in data], features)
    if cfg.norm == "range":
        norm = cfg.norm_range
    else:
        lo, hi = float(tpv.min()), float(tpv.max())
        if hi - lo < 1e-12:
            lo, hi = lo - 0.5, hi + 0.5
        norm = (lo, hi)
    ens = NNEnsemble([], FuzzyEncoding(cfg.k), (float(norm[0]), float(norm[1])), features, cfg.coding)
    # centre only: features are already in [0, 1], and dividing by the spread
    # would blow the near-constant toggle rates of random tests up into noise
    ens.x_mean = x.mean(axis=0)
    ens.x_scale = np.ones(x.shape[1])
    x = ens.scale_inputs(x)
    y = ens.encode_targets(tpv)
    log = log if log is not None else TrainingLog()
    n = len(data)
    m = max(1, int(round(cfg.subset_fraction * n)))
    for net_id in range(cfg.n_nets):
        net_seed = int(rng.integers(0, 2**63))
        net_rng = np.random.default_rng(net_seed)
        perm = net_rng.permutation(n)
        tr, va = np.sort(perm[:m]), np.sort(perm[m:])
        net = Net.init(features.dim, cfg.hidden, ens.n_outputs, net_rng)
        train_mse, val_mse = _train_net(net, x[tr], y[tr], x[va], y[va], cfg, net_rng, net_id, log)
        ens.nets.append(net)
        ens.subsets.append(
            {"seed": net_seed, "size": int(m), "train_mse": train_mse, "val_mse": val_mse}
        )
    return ens


def ensemble_error(ens: NNEnsemble) -> float:
    """Mean of the per-net final validation errors."""
    return float(np.mean([s["val_mse"] for s in ens.subsets])) if ens.subsets else float("nan")


def _net_distributions(ens: NNEnsemble, x: np.ndarray) -> np.ndarray:
    """(n_nets, n_samples, k) class distributions."""
    if x.shape[1] != ens.features.dim or any(net.shape[0] != x.shape[1] for net in ens.nets):
        raise ShapeMismatchError(f"feature length {x.shape[1]} does not match ensemble input")
    x = ens.scale_inputs(x)
    outs = []
    for net in ens.nets:
        o = net.predict(x)
        if ens.coding == "fuzzy":
            o = o / o.sum(axis=1, keepdims=True)
        else:
            o = ens.encoding.memberships(o[:, 0])
        outs.append(o)
    return np.stack(outs)


def predict_batch(ens: NNEnsemble, stimuli: Sequence[TestStimulus]) -> tuple[np.ndarray, np.ndarray]:
    """Class distributions (n, k) and confidences (n,) for many stimuli."""
    x = feature_matrix(list(stimuli), ens.features)
    per_net = _net_distributions(ens, x)
    mean = per_net.mean(axis=0)
    deviation = np.abs(per_net - mean).mean(axis=2).mean(axis=0)
    return mean, 1.0 - deviation


def predict(ens: NNEnsemble, s: TestStimulus) -> tuple[np.ndarray, float]:
    dist, conf = predict_batch(ens, [s])
    return dist[0], float(conf[0])


def predicted_trip(ens: NNEnsemble, stimuli: Sequence[TestStimulus]) -> np.ndarray:
    """Defuzzified trip-point estimate in parameter units."""
    dist, _ = predict_batch(ens, stimuli)
    lo, hi = ens.norm
    return lo + ens.encoding.decode(dist) * (hi - lo)


def propose_candidates(
    ens: NNEnsemble,
    count: int,
    objective: Objective,
    gen_cfg: GeneratorConfig,
    rng: np.random.Generator,
    pool_factor: int = 20,
    prefix: str = "N",
) -> list[TestStimulus]:
    """Screen a random pool in software and keep the tests most likely to be extreme.

    The score is the predicted membership in the fuzzy set at the objective's
    end of the range (lowest set when minimizing). Ties keep pool order.
    """
    if count <= 0:
        return []
    pool = [generate_random_test(gen_cfg, rng, f"{prefix}{i:06d}") for i in range(pool_factor * count)]
    dist, _ = predict_batch(ens, pool)
    score = dist[:, 0] if objective is Objective.MINIMIZE else dist[:, -1]
    order = np.argsort(-score, kind="stable")[:count]
    return [pool[i] for i in order]


def accuracy(ens: NNEnsemble, data: Sequence[tuple[TestStimulus, float]]) -> float:
    """Fraction of tests whose argmax class matches the argmax of their encoded trip."""
    if not data:
        return float("nan")
    dist, _ = predict_batch(ens, [s for s, _ in data])
    target = ens.encoding.memberships(normalize(np.array([t for _, t in data]), ens.norm))
    return float(np.mean(dist.argmax(axis=1) == target.argmax(axis=1)))


def weights_document(ens: NNEnsemble) -> dict:
    return {
        "version": ens.version,
        "shapes": {
            "input": ens.features.dim,
            "hidden": ens.nets[0].shape[1] if ens.nets else 0,
            "output": ens.n_outputs,
            "n_nets": len(ens.nets),
        },
        "encoding": {"k": ens.encoding.k, "coding": ens.coding, "centers": ens.encoding.centers.tolist()},
        "norm": list(ens.norm),
        "features": {"hist_bins": ens.features.hist_bins, "generator": ens.features.gen.to_dict()},
        "subsets": ens.subsets,
        "input_scaling": None
        if ens.x_mean is None
        else {"mean": ens.x_mean.tolist(), "scale": ens.x_scale.tolist()},
        "nets": [net.to_dict() for net in ens.nets],
    }


def save_weights(ens: NNEnsemble, path) -> None:
    Path(path).write_text(json.dumps(weights_document(ens), indent=1, sort_keys=True) + "\n")


def load_weights(path) -> NNEnsemble:
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as exc:
        raise WeightFileError(f"cannot read weight file {path}: {exc.strerror}") from exc
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise WeightFileError(f"malformed weight file {path}: {exc}") from exc
    if not isinstance(doc, dict) or "version" not in doc:
        raise WeightFileError(f"malformed weight file {path}: no version tag")
    if str(doc["version"]) != WEIGHT_FILE_VERSION:
        raise VersionMismatchError(f"weight file version {doc['version']!r}, expected {WEIGHT_FILE_VERSION!r}")
    try:
        features = FeatureConfig(
            GeneratorConfig.from_dict(doc["features"]["generator"]), int(doc["features"]["hist_bins"])
        )
        nets = [Net.from_dict(d) for d in doc["nets"]]
        enc = FuzzyEncoding(int(doc["encoding"]["k"]))
        ens = NNEnsemble(
            nets, enc, tuple(float(v) for v in doc["norm"]), features, doc["encoding"]["coding"],
            list(doc.get("subsets", [])),
        )
        scaling = doc.get("input_scaling")
        if scaling is not None:
            ens.x_mean = np.asarray(scaling["mean"], dtype=float)
            ens.x_scale = np.asarray(scaling["scale"], dtype=float)
        shapes = doc["shapes"]
    except (KeyError, TypeError, ValueError) as exc:
        raise WeightFileError(f"malformed weight file {path}: {exc}") from exc
    for net in nets:
        if net.shape != (shapes["input"], shapes["hidden"], shapes["output"]):
            raise WeightFileError(f"malformed weight file {path}: net shape {net.shape} != {shapes}")
    if len(nets) != shapes["n_nets"] or features.dim != shapes["input"]:
        raise WeightFileError(f"malformed weight file {path}: inconsistent shapes")
    return ens
