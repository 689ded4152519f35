"""Multi-population GA that hunts for the worst-case test.

Individuals carry two chromosomes: the vector-cycle pattern and the test
conditions. Fitness is the worst case ratio of the trip point measured with
search-until-trip-point, all evaluations sharing one reference trip. A
population that stops improving is archived and restarted from fresh seeds.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, field
from typing import Mapping

import numpy as np

from .campaign import characterize_one
from .common import Objective
from .dut_sim import DeviceModel
from .learner import NNEnsemble, propose_candidates
from .stimulus import GeneratorConfig, TestStimulus, generate_random_test, random_words
from .trip_search import SearchConfig, SearchState
from .wcr import Side, WcrClass, classify, wcr_ratio

DEAD = -math.inf  # fitness of functional fails and failed searches
IMPROVEMENT_TOL = 1e-9


class OptimizerError(RuntimeError):
    pass


class BudgetTooSmallError(OptimizerError):
    pass


@dataclass(frozen=True)
class GaConfig:
    n_populations: int = 4
    pop_size: int = 20
    max_total_measurement_searches: int = 2000
    crossover_rate: float = 0.9
    bit_mutation_rate: float = 0.01
    length_mutation_rate: float = 0.05
    condition_mutation_sigma: float = 0.05
    stagnation_generations: int = 8
    elite_count: int = 1
    tournament_size: int = 3
    stop_wcr: float = 1.0
    seed_fraction: float = 0.5  # share of each population seeded by the ensemble

    def __post_init__(self):
        for name in ("crossover_rate", "bit_mutation_rate", "length_mutation_rate", "seed_fraction"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")
        for name in ("n_populations", "pop_size", "stagnation_generations", "tournament_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not 0 <= self.elite_count <= self.pop_size:
            raise ValueError("elite_count must be in [0, pop_size]")
        if self.condition_mutation_sigma < 0:
            raise ValueError("condition_mutation_sigma must be >= 0")

    @classmethod
    def from_dict(cls, d: Mapping) -> "GaConfig":
        return cls(**dict(d))

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Individual:
    stimulus: TestStimulus
    fitness: float | None = None
    tpv: float | None = None

    @property
    def id(self) -> str:
        return self.stimulus.id


class IdSource:
    def __init__(self, prefix: str = "G"):
        self.prefix = prefix
        self.n = 0

    def __call__(self) -> str:
        self.n += 1
        return f"{self.prefix}{self.n:07d}"


@dataclass
class ArchiveEntry:
    stimulus: TestStimulus
    tpv: float
    ratio: float
    cls: WcrClass
    generation: int
    population_id: int

    def to_dict(self) -> dict:
        return {
            "stimulus": self.stimulus.to_dict(),
            "tpv": self.tpv,
            "ratio": self.ratio,
            "class": self.cls.value,
            "generation": self.generation,
            "population_id": self.population_id,
        }


@dataclass
class WorstCaseArchive:
    entries: list[ArchiveEntry] = field(default_factory=list)
    restarts: int = 0
    searches_used: int = 0
    functional_fails: list[TestStimulus] = field(default_factory=list)
    telemetry: list[tuple[int, int, float, float, int]] = field(default_factory=list)
    generations: int = 0

    def add(self, entry: ArchiveEntry) -> None:
        for i, e in enumerate(self.entries):
            if e.stimulus == entry.stimulus:
                if entry.ratio > e.ratio:
                    self.entries[i] = entry
                return
        self.entries.append(entry)

    def sort(self) -> None:
        self.entries.sort(key=lambda e: (-e.ratio, e.stimulus.id))

    @property
    def best(self) -> ArchiveEntry | None:
        return self.entries[0] if self.entries else None

    def to_dict(self) -> dict:
        return {
            "entries": [e.to_dict() for e in self.entries],
            "restarts": self.restarts,
            "searches_used": self.searches_used,
            "generations": self.generations,
            "functional_fail_archive": [s.to_dict() for s in self.functional_fails],
        }

    def telemetry_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["population_id", "generation", "best_fitness", "mean_fitness", "searches_used"])
        for row in self.telemetry:
            w.writerow([row[0], row[1], repr(row[2]), repr(row[3]), row[4]])
        return buf.getvalue()


def init_populations(
    seeds: list[TestStimulus],
    cfg: GaConfig,
    gen_cfg: GeneratorConfig,
    rng: np.random.Generator,
    ids: IdSource | None = None,
) -> list[list[Individual]]:
    """Deal seeds round-robin across populations, then pad each with random tests."""
    ids = ids or IdSource()
    pops: list[list[Individual]] = [[] for _ in range(cfg.n_populations)]
    for i, s in enumerate(seeds[: cfg.n_populations * cfg.pop_size]):
        pops[i % cfg.n_populations].append(Individual(s))
    for pop in pops:
        while len(pop) < cfg.pop_size:
            pop.append(Individual(generate_random_test(gen_cfg, rng, ids())))
    return pops


@dataclass
class _Evaluator:
    """Fitness via search-until-trip, with a content cache and a shared search budget."""

    model: DeviceModel
    search_cfg: SearchConfig
    spec: float
    side: Side
    budget: int
    state: SearchState = field(default_factory=SearchState)
    used: int = 0
    cache: dict = field(default_factory=dict)
    functional: list = field(default_factory=list)

    def evaluate(self, pop: list[Individual]) -> bool:
        """Evaluate in place; returns False if the budget ran out first."""
        for ind in pop:
            if ind.fitness is not None:
                continue
            hit = self.cache.get(ind.stimulus.key)
            if hit is not None:
                ind.tpv, ind.fitness = hit
                continue
            if self.used >= self.budget:
                return False
            kind, res, self.state = characterize_one(self.model, ind.stimulus, self.search_cfg, "sutp", self.state)
            self.used += 1
            if kind == "ok":
                ind.tpv = res.value
                ind.fitness = wcr_ratio(res.value, self.spec, self.side)
            else:
                ind.tpv, ind.fitness = None, DEAD
                if kind == "ffail":
                    self.functional.append(ind.stimulus)
            self.cache[ind.stimulus.key] = (ind.tpv, ind.fitness)
        return True


def evaluate_fitness(
    pop: list[Individual],
    model: DeviceModel,
    search_cfg: SearchConfig,
    state: SearchState,
    spec: float,
    side: Side,
    budget: int | None = None,
) -> tuple[list[Individual], SearchState, int]:
    """Measure every unevaluated individual; returns (pop, new state, searches used)."""
    ev = _Evaluator(model, search_cfg, spec, side, budget if budget is not None else len(pop), state)
    ev.evaluate(pop)
    return pop, ev.state, ev.used


def _rank_key(ind: Individual):
    return (-(ind.fitness if ind.fitness is not None else DEAD), ind.id)


def _tournament(pop: list[Individual], k: int, rng: np.random.Generator) -> Individual:
    picks = rng.integers(0, len(pop), size=k)
    return min((pop[i] for i in picks), key=_rank_key)


def _clamp_length(words: np.ndarray, donor: np.ndarray, gen_cfg: GeneratorConfig) -> np.ndarray:
    if len(words) > gen_cfg.max_len:
        return words[: gen_cfg.max_len]
    if len(words) < gen_cfg.min_len:
        need = gen_cfg.min_len - len(words)
        return np.concatenate([words, donor[len(donor) - need :]])
    return words


def crossover(
    a: TestStimulus, b: TestStimulus, gen_cfg: GeneratorConfig, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray, dict, dict]:
    """One-point pattern crossover at a cycle boundary plus arithmetic condition blend."""
    pa, pb = a.pattern, b.pattern
    cut = int(rng.integers(1, min(len(pa), len(pb))))
    c1 = _clamp_length(np.concatenate([pa[:cut], pb[cut:]]), pb, gen_cfg)
    c2 = _clamp_length(np.concatenate([pb[:cut], pa[cut:]]), pa, gen_cfg)
    alpha = float(rng.uniform(0.0, 1.0))
    k1 = {n: alpha * a.conditions[n] + (1 - alpha) * b.conditions[n] for n in gen_cfg.condition_names}
    k2 = {n: (1 - alpha) * a.conditions[n] + alpha * b.conditions[n] for n in gen_cfg.condition_names}
    return c1, c2, k1, k2


def mutate(
    pattern: np.ndarray, conds: dict, cfg: GaConfig, gen_cfg: GeneratorConfig, rng: np.random.Generator
) -> tuple[np.ndarray, dict]:
    w = gen_cfg.word_width
    pattern = np.array(pattern, dtype=np.uint32)
    if cfg.bit_mutation_rate > 0:
        flips = rng.random((len(pattern), w)) < cfg.bit_mutation_rate
        if flips.any():
            masks = (flips.astype(np.uint32) << np.arange(w, dtype=np.uint32)).sum(axis=1, dtype=np.uint32)
            pattern ^= masks
    if cfg.length_mutation_rate > 0 and rng.random() < cfg.length_mutation_rate:
        n = len(pattern)
        insert = rng.random() < 0.5
        if n >= gen_cfg.max_len:
            insert = False
        elif n <= gen_cfg.min_len:
            insert = True
        if insert:
            pos = int(rng.integers(0, n + 1))
            pattern = np.insert(pattern, pos, random_words(rng, 1, w))
        else:
            pattern = np.delete(pattern, int(rng.integers(0, n)))
    conds = dict(conds)
    if cfg.condition_mutation_sigma > 0:
        for name, lo, hi in gen_cfg.conditions:
            v = conds[name] + rng.normal(0.0, cfg.condition_mutation_sigma * (hi - lo))
            conds[name] = min(max(v, lo), hi)
    return pattern, conds


def evolve_generation(
    pop: list[Individual],
    cfg: GaConfig,
    gen_cfg: GeneratorConfig,
    rng: np.random.Generator,
    ids: IdSource | None = None,
) -> list[Individual]:
    """Elitism, tournament selection, crossover and mutation; offspring fitness is cleared."""
    ids = ids or IdSource()
    ranked = sorted(pop, key=_rank_key)
    new = [Individual(ind.stimulus, ind.fitness, ind.tpv) for ind in ranked[: cfg.elite_count]]
    while len(new) < cfg.pop_size:
        a = _tournament(pop, cfg.tournament_size, rng).stimulus
        b = _tournament(pop, cfg.tournament_size, rng).stimulus
        if rng.random() < cfg.crossover_rate:
            p1, p2, k1, k2 = crossover(a, b, gen_cfg, rng)
            children = [(p1, k1), (p2, k2)]
        else:
            children = [(a.pattern, a.conditions), (b.pattern, b.conditions)]
        for pattern, conds in children:
            if len(new) >= cfg.pop_size:
                break
            pattern, conds = mutate(pattern, conds, cfg, gen_cfg, rng)
            new.append(Individual(TestStimulus(ids(), pattern, conds)))
    return new


def _best(pop: list[Individual]) -> Individual | None:
    alive = [ind for ind in pop if ind.fitness is not None and ind.fitness > DEAD]
    return min(alive, key=_rank_key) if alive else None


def optimize(
    model: DeviceModel,
    ensemble: NNEnsemble | None,
    cfg: GaConfig,
    search_cfg: SearchConfig,
    gen_cfg: GeneratorConfig,
    spec: float,
    side: Side,
    rng: np.random.Generator,
    objective: Objective | None = None,
    pool_factor: int = 20,
    state: SearchState | None = None,
) -> WorstCaseArchive:
    """Run the GA until the search budget is spent or a test reaches ``stop_wcr``."""
    budget = cfg.max_total_measurement_searches
    if budget < cfg.pop_size * cfg.n_populations:
        raise BudgetTooSmallError(
            f"budget {budget} < pop_size*n_populations = {cfg.pop_size * cfg.n_populations}"
        )
    objective = objective or (Objective.MINIMIZE if side is Side.MIN else Objective.MAXIMIZE)
    ids = IdSource("G")
    n_seed = int(round(cfg.seed_fraction * cfg.pop_size))

    def seeds_for(n_pops: int, tag: str) -> list[TestStimulus]:
        if ensemble is None or n_seed == 0:
            return []
        found = propose_candidates(ensemble, n_seed * n_pops, objective, gen_cfg, rng, pool_factor, prefix=tag)
        return [s.renamed(ids()) for s in found]

    pops = init_populations(seeds_for(cfg.n_populations, "N"), cfg, gen_cfg, rng, ids)
    ev = _Evaluator(model, search_cfg, spec, side, budget, state or SearchState())
    archive = WorstCaseArchive()
    best_fit = [DEAD] * len(pops)
    stale = [0] * len(pops)

    def archive_best(j: int, pop: list[Individual], generation: int) -> None:
        b = _best(pop)
        if b is not None:
            archive.add(ArchiveEntry(b.stimulus, b.tpv, b.fitness, classify(b.fitness), generation, j))

    generation = 0
    while True:
        complete = True
        for j, pop in enumerate(pops):
            if not ev.evaluate(pop):
                complete = False
                break
        for j, pop in enumerate(pops):
            fits = [ind.fitness for ind in pop if ind.fitness is not None and ind.fitness > DEAD]
            archive.telemetry.append(
                (j, generation, max(fits) if fits else DEAD, float(np.mean(fits)) if fits else DEAD, ev.used)
            )
        top = max((ind.fitness for pop in pops for ind in pop if ind.fitness is not None), default=DEAD)
        if not complete or ev.used >= budget or top >= cfg.stop_wcr:
            break
        for j in range(len(pops)):
            b = _best(pops[j])
            f = b.fitness if b is not None else DEAD
            if f > best_fit[j] + IMPROVEMENT_TOL:
                best_fit[j], stale[j] = f, 0
            else:
                stale[j] += 1
            if stale[j] >= cfg.stagnation_generations:
                archive_best(j, pops[j], generation)
                archive.restarts += 1
                fresh = seeds_for(1, f"R{archive.restarts}_")
                pops[j] = init_populations(fresh, GaConfig(n_populations=1, pop_size=cfg.pop_size), gen_cfg, rng, ids)[0]
                best_fit[j], stale[j] = DEAD, 0
            else:
                pops[j] = evolve_generation(pops[j], cfg, gen_cfg, rng, ids)
        generation += 1

    for j, pop in enumerate(pops):
        archive_best(j, pop, generation)
    archive.searches_used = ev.used
    archive.functional_fails = list(ev.functional)
    archive.generations = generation + 1
    archive.sort()
    return archive
