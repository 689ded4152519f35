"""End-to-end runs behind the CLI: characterize, learn, optimize, shmoo, compare.

Each run returns a JSON-ready payload plus any side documents (CSV, ASCII);
nothing here touches the filesystem except reading input files.
Payloads carry the root seed and config hash and no timestamps, so the same
config and seed always produce byte-identical files.
"""

from __future__ import annotations

import json
import math
import statistics
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .campaign import CharacterizationResult, run_campaign, worst_trip
from .config import RunConfig
from .dut_sim import DeviceModel, global_worst_case, new_model
from .learner import (
    NNEnsemble,
    TrainingLog,
    accuracy,
    ensemble_error,
    predict_batch,
    train_ensemble,
    weights_document,
)
from .optimizer import WorstCaseArchive, optimize
from .stimulus import TestStimulus, generate_tests, march_patterns
from .wcr import Side, WcrReport, classify, wcr_aggregate

HOLDOUT_FRACTION = 0.1


class RunFailure(RuntimeError):
    """A run that completed but did not reach its goal (exit code 3).

    ``output`` carries whatever the run still produced, so it can be written.
    """

    def __init__(self, message: str, output: "Output | None" = None):
        super().__init__(message)
        self.output = output


class UsageError(ValueError):
    """Bad arguments or inputs (exit code 2)."""


def rng_for(cfg: RunConfig, stream: str) -> np.random.Generator:
    return np.random.default_rng([cfg.root_seed, zlib.crc32(stream.encode())])


def meta(cfg: RunConfig, command: str) -> dict:
    return {"command": command, "root_seed": cfg.root_seed, "device_seed": cfg.device_seed, "config_hash": cfg.hash}


def model_for(cfg: RunConfig) -> DeviceModel:
    return new_model(cfg.model, cfg.device_seed, cfg.features)


def side_for(cfg: RunConfig) -> Side:
    return Side.for_objective(cfg.objective)


def dumps(doc: dict) -> str:
    return json.dumps(doc, indent=1, allow_nan=True) + "\n"


def _wcr_of(result: CharacterizationResult, cfg: RunConfig) -> WcrReport | None:
    if not result.entries:
        return None
    return wcr_aggregate([(e.stimulus_id, e.result.value) for e in result.entries], cfg.spec, side_for(cfg))


@dataclass
class Output:
    payload: dict
    files: dict[str, str]
    summary: str


# ---------------------------------------------------------------- characterize


def characterize(cfg: RunConfig, n_tests: int, jobs: int = 1, strategy: str | None = None) -> Output:
    if n_tests < 1:
        raise UsageError("n_tests must be >= 1")
    strategy = strategy or cfg.strategy
    model = model_for(cfg)
    tests = generate_tests(cfg.generator, n_tests, rng_for(cfg, "characterize"))
    result = run_campaign(model, tests, cfg.search, strategy, cfg.spec, cfg.objective, jobs=jobs)
    report = _wcr_of(result, cfg)
    payload = {
        "meta": meta(cfg, "characterize"),
        "strategy": strategy,
        "n_tests": n_tests,
        "campaign": result.to_dict(),
        "stimuli": [s.to_dict() for s in tests],
    }
    files = {"characterize.csv": result.to_csv()}
    if report is None:
        payload["worst"] = None
        summary = f"{n_tests} tests, none converged ({result.total_measurements} measurements)"
        raise RunFailure("no test converged", Output(payload, files, summary))
    sid, tpv = worst_trip(result)
    payload["worst"] = {"stimulus_id": sid, "tpv": tpv}
    payload["wcr"] = report.to_dict()
    files["characterize_wcr.csv"] = report.to_csv()
    summary = (
        f"strategy={strategy} tests={n_tests} converged={len(result.entries)} "
        f"measurements={result.total_measurements}\n"
        f"worst trip: {sid} tpv={tpv:.4f}  WCR={report.aggregate_wcr:.3f} ({classify(report.aggregate_wcr).value})"
    )
    return Output(payload, files, summary)


# ---------------------------------------------------------------------- learn


def _measure_training_set(cfg: RunConfig, model: DeviceModel, n: int, stream: str, jobs: int = 1):
    tests = generate_tests(cfg.generator, n, rng_for(cfg, stream), prefix="L")
    result = run_campaign(model, tests, cfg.search, "sutp", cfg.spec, cfg.objective, jobs=jobs)
    return [(e.stimulus, e.result.value) for e in result.entries], result


def learn_ensemble(cfg: RunConfig, model: DeviceModel, n_train: int, stream: str = "learn", holdout: float = 0.0, jobs: int = 1):
    """Measure ``n_train`` random tests, train the ensemble; returns (ens, log, held-out data, campaign)."""
    if n_train < cfg.nn.min_samples:
        raise UsageError(f"n_train={n_train} below nn.min_samples={cfg.nn.min_samples}")
    data, campaign = _measure_training_set(cfg, model, n_train, stream, jobs)
    rng = rng_for(cfg, stream + "/train")
    n_hold = int(round(holdout * len(data)))
    if n_hold:
        order = rng.permutation(len(data))
        held = [data[i] for i in sorted(order[:n_hold])]
        data = [data[i] for i in sorted(order[n_hold:])]
    else:
        held = []
    if len(data) < cfg.nn.min_samples:
        raise UsageError(f"only {len(data)} converged training tests; need {cfg.nn.min_samples}")
    log = TrainingLog()
    ens = train_ensemble(data, cfg.nn, cfg.features, rng, log)
    return ens, log, held, campaign


def learn(cfg: RunConfig, n_train: int, jobs: int = 1) -> Output:
    model = model_for(cfg)
    ens, log, held, campaign = learn_ensemble(cfg, model, n_train, holdout=HOLDOUT_FRACTION, jobs=jobs)
    err = ensemble_error(ens)
    converged = err <= cfg.nn.target_error
    if held:
        _, conf = predict_batch(ens, [s for s, _ in held])
        hold = {"n": len(held), "accuracy": accuracy(ens, held), "mean_confidence": float(np.mean(conf))}
    else:
        hold = {"n": 0, "accuracy": None, "mean_confidence": None}
    weights = json.dumps(weights_document(ens), indent=1, sort_keys=True) + "\n"
    payload = {
        "meta": meta(cfg, "learn"),
        "n_train": n_train,
        "training_measurements": campaign.total_measurements,
        "validation_error": err,
        "target_error": cfg.nn.target_error,
        "converged": converged,
        "holdout": hold,
    }
    summary = (
        f"trained {len(ens.nets)} nets on {n_train - hold['n']} tests; validation MSE={err:.5f} "
        f"(target {cfg.nn.target_error:g})\n"
        f"held-out {hold['n']}: accuracy={hold['accuracy']}, confidence={hold['mean_confidence']}"
    )
    out = Output(payload, {"weights": weights, "training_log.csv": log.to_csv()}, summary)
    if not converged:
        raise RunFailure(f"validation error {err:.5f} above target {cfg.nn.target_error:g}", out)
    return out


# ------------------------------------------------------------------- optimize


def run_optimizer(cfg: RunConfig, model: DeviceModel, ens: NNEnsemble | None, budget: int, stream: str = "optimize") -> WorstCaseArchive:
    ga = replace(cfg.ga, max_total_measurement_searches=budget)
    return optimize(
        model, ens, ga, cfg.search, cfg.generator, cfg.spec, side_for(cfg), rng_for(cfg, stream),
        cfg.objective, cfg.nn.pool_factor,
    )


def optimize_run(cfg: RunConfig, ens: NNEnsemble | None, budget: int) -> Output:
    if ens is not None and ens.features != cfg.features:
        raise UsageError("weight file feature layout does not match the run config")
    model = model_for(cfg)
    archive = run_optimizer(cfg, model, ens, budget)
    _, gw = global_worst_case(model, objective=cfg.objective)
    payload = {
        "meta": meta(cfg, "optimize"),
        "seeded": ens is not None,
        "budget": budget,
        "config": {"ga": replace(cfg.ga, max_total_measurement_searches=budget).to_dict(), "search": cfg.search.to_dict()},
        "analytic_worst_case": gw,
        "archive": archive.to_dict(),
    }
    lines = [f"searches used {archive.searches_used}/{budget}, restarts {archive.restarts}, generations {archive.generations}"]
    for e in archive.entries[:5]:
        lines.append(f"  {e.stimulus.id:>12}  tpv={e.tpv:.4f}  WCR={e.ratio:.3f}  {e.cls.value}")
    return Output(payload, {"telemetry.csv": archive.telemetry_csv()}, "\n".join(lines))


# ---------------------------------------------------------------------- shmoo


def load_tests(source: str, cfg: RunConfig, top: int | None = None) -> list[TestStimulus]:
    """``archive:PATH`` | ``campaign:PATH`` | ``random:N``."""
    kind, _, arg = source.partition(":")
    if kind == "random":
        try:
            n = int(arg)
        except ValueError as exc:
            raise UsageError(f"bad test count in {source!r}") from exc
        return generate_tests(cfg.generator, n, rng_for(cfg, "shmoo"), prefix="S")
    if kind not in ("archive", "campaign"):
        raise UsageError(f"tests source must be archive:PATH, campaign:PATH or random:N, got {source!r}")
    path = Path(arg)
    if not path.is_file():
        raise UsageError(f"tests file not found: {path}")
    try:
        doc = json.loads(path.read_text())
        if kind == "archive":
            tests = [TestStimulus.from_dict(e["stimulus"]) for e in doc["archive"]["entries"]]
        else:
            tests = [TestStimulus.from_dict(s) for s in doc["stimuli"]]
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise UsageError(f"cannot read tests from {path}: {exc}") from exc
    return tests[:top] if top else tests


# -------------------------------------------------------------------- compare


def min_compare_budget(cfg: RunConfig) -> int:
    need_learn = math.ceil(cfg.nn.min_samples / cfg.learn_fraction)
    need_ga = math.ceil(cfg.ga.pop_size * cfg.ga.n_populations / (1.0 - cfg.learn_fraction))
    return max(need_learn, need_ga)


def compare_one(cfg: RunConfig, budget: int) -> dict:
    """Deterministic march set vs random tests vs NN-seeded GA, for one root seed."""
    if budget < min_compare_budget(cfg):
        raise RunFailure(f"budget {budget} below the minimum {min_compare_budget(cfg)} for the learn/optimize split")
    model = model_for(cfg)
    side = side_for(cfg)
    _, gw = global_worst_case(model, objective=cfg.objective)
    rows = []

    det_tests = march_patterns(cfg.generator)
    det = run_campaign(model, det_tests, cfg.search, "sutp", cfg.spec, cfg.objective)
    rows.append(_row("March Test", "Deterministic", det, cfg, len(det_tests)))

    rnd_tests = generate_tests(cfg.generator, budget, rng_for(cfg, "compare/random"), prefix="R")
    rnd = run_campaign(model, rnd_tests, cfg.search, "sutp", cfg.spec, cfg.objective)
    rows.append(_row("Random Test", "Random", rnd, cfg, budget))

    n_learn = int(round(cfg.learn_fraction * budget))
    ens, _, _, _ = learn_ensemble(cfg, model, n_learn, stream="compare/learn")
    archive = run_optimizer(cfg, model, ens, budget - n_learn, stream="compare/optimize")
    best = archive.best
    rows.append(
        {
            "test_name": "NNGA Test",
            "technique": "Neural & Genetic",
            "wcr": best.ratio if best else None,
            "tpv": best.tpv if best else None,
            "stimulus_id": best.stimulus.id if best else None,
            "searches": n_learn + archive.searches_used,
            "validation_error": ensemble_error(ens),
            "restarts": archive.restarts,
        }
    )
    return {
        "root_seed": cfg.root_seed,
        "budget": budget,
        "side": side.value,
        "analytic_worst_case": gw,
        "rows": rows,
    }


def _row(name: str, technique: str, result: CharacterizationResult, cfg: RunConfig, searches: int) -> dict:
    rep = _wcr_of(result, cfg)
    if rep is None:
        return {"test_name": name, "technique": technique, "wcr": None, "tpv": None, "stimulus_id": None, "searches": searches}
    sid, tpv = worst_trip(result)
    return {"test_name": name, "technique": technique, "wcr": rep.aggregate_wcr, "tpv": tpv, "stimulus_id": sid, "searches": searches}


def _compare_seed(args):
    cfg, budget, seed = args
    return compare_one(RunConfig.from_dict({**cfg.raw, "root_seed": seed}), budget)


def compare(cfg: RunConfig, budget: int, n_seeds: int = 1, jobs: int = 1) -> Output:
    if budget < min_compare_budget(cfg):
        raise RunFailure(f"budget {budget} below the minimum {min_compare_budget(cfg)} for the learn/optimize split")
    seeds = [cfg.root_seed + i for i in range(n_seeds)]
    work = [(cfg, budget, s) for s in seeds]
    if jobs > 1 and n_seeds > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            runs = list(ex.map(_compare_seed, work))
    else:
        runs = [_compare_seed(w) for w in work]
    table = []
    for i, name in enumerate(("March Test", "Random Test", "NNGA Test")):
        wcrs = [r["rows"][i]["wcr"] for r in runs if r["rows"][i]["wcr"] is not None]
        tpvs = [r["rows"][i]["tpv"] for r in runs if r["rows"][i]["tpv"] is not None]
        table.append(
            {
                "test_name": name,
                "technique": runs[0]["rows"][i]["technique"],
                "median_wcr": statistics.median(wcrs) if wcrs else None,
                "median_tpv": statistics.median(tpvs) if tpvs else None,
            }
        )
    payload = {
        "meta": meta(cfg, "compare"),
        "budget": budget,
        "seeds": seeds,
        "table": table,
        "runs": runs,
    }
    width = 12
    lines = [f"{'Test Name':<{width}} {'Technique':<18} {'WCR':>6} {'tpv':>9}"]
    for row in table:
        wcr = f"{row['median_wcr']:.3f}" if row["median_wcr"] is not None else "-"
        tpv = f"{row['median_tpv']:.2f}" if row["median_tpv"] is not None else "-"
        lines.append(f"{row['test_name']:<{width}} {row['technique']:<18} {wcr:>6} {tpv:>9}")
    if n_seeds > 1:
        lines.append(f"(medians over {n_seeds} seeds)")
    lines.append(f"analytic worst case tpv: {runs[0]['analytic_worst_case']:.3f}")
    return Output(payload, {}, "\n".join(lines))
