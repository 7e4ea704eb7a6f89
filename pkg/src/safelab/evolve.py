"""Evolutionary search over intrinsic-cost network weights.

Each candidate is a flat weight vector for the small cost net. Fitness is
the mean episodic violation cost that constrained learners still incur
near the end of training when the candidate's cost is added to the
training signal, so lower is better and zero means the learners finished
violation-free. Selection keeps the best few; among fully violation-free
candidates the tie is broken by the return they allowed. Survivors are
copied unchanged into the next stage (their recorded fitness stands), and
children perturb a random survivor with either additive Gaussian noise or
elementwise rescaling.
"""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .costs import CostFn, intrinsic_architecture
from .csvio import write_csv
from .learners import TrainConfig, train
from .nets import MlpParams
from .seeding import config_hash, derive_seed
from .world import WorldConfig

log = logging.getLogger(__name__)

HISTORY_FIELDS = ("stage", "candidate_id", "fitness", "mean_return", "is_survivor")


@dataclass
class EvolutionConfig:
    population_size: int = 8
    n_stages: int = 4
    top_fraction: float = 0.1
    gaussian_sigma: float = 1.0
    scale_bounds: tuple[float, float] = (0.8, 1.2)
    eval_seeds: int = 2
    learners: tuple[str, ...] = ("ppo_lagrangian", "cpo")
    fitness_window: float = 0.1
    hidden_activation: str = "sigmoid"
    use_extrinsic: bool = True
    master_seed: int = 0
    workers: int = 1
    env: WorldConfig = field(default_factory=WorldConfig)
    train: TrainConfig = field(default_factory=lambda: TrainConfig(iterations=40))

    def __post_init__(self):
        if self.population_size < 1 or self.n_stages < 1:
            raise ValueError("population_size and n_stages must be positive")
        if not (0.0 < self.top_fraction <= 1.0):
            raise ValueError("top_fraction must be in (0, 1]")
        lo, hi = self.scale_bounds
        if not (lo <= hi):
            raise ValueError("scale_bounds must be ordered")
        if self.eval_seeds < 1 or not self.learners:
            raise ValueError("need at least one eval seed and one learner")
        if not (0.0 < self.fitness_window <= 1.0):
            raise ValueError("fitness_window must be in (0, 1]")

    @property
    def n_survivors(self) -> int:
        return math.ceil(self.population_size * self.top_fraction)


@dataclass(eq=False)
class Candidate:
    params: np.ndarray
    fitness: float | None = None
    mean_return: float | None = None
    per_run: dict | None = None
    failed: bool = False


@dataclass(frozen=True)
class StageRecord:
    stage: int
    candidate_id: int
    fitness: float
    mean_return: float
    is_survivor: bool


def init_population(config: EvolutionConfig, rng) -> list[Candidate]:
    """Independent standard-normal weight vectors."""
    dim = intrinsic_architecture(config.hidden_activation).param_count()
    return [Candidate(rng.standard_normal(dim)) for _ in range(config.population_size)]


def candidate_cost_fn(candidate: Candidate, config: EvolutionConfig) -> CostFn:
    params = MlpParams(intrinsic_architecture(config.hidden_activation),
                       np.asarray(candidate.params, dtype=np.float64))
    return CostFn("intrinsic_net", params=params, use_extrinsic=config.use_extrinsic)


def fitness_window_iters(config: EvolutionConfig) -> int:
    return max(1, int(round(config.fitness_window * config.train.iterations)))


def evaluate(candidate: Candidate, config: EvolutionConfig, train_fn=train) -> Candidate:
    """Train every learner on every derived seed with the candidate's cost
    added; fitness is the mean final-window violation cost. Any failure
    marks the candidate with an infinite-fitness sentinel."""
    cost_fn = candidate_cost_fn(candidate, config)
    window = fitness_window_iters(config)
    costs, rets, per_run = [], [], {}
    try:
        for learner in config.learners:
            for j in range(config.eval_seeds):
                seed = derive_seed(config.master_seed, "inner", learner, j)
                _, metrics = train_fn(learner, config.env, cost_fn, config.train, seed)
                tail = metrics[-window:]
                run_cost = float(np.mean([m.avg_ep_cost_ex for m in tail]))
                run_ret = float(np.mean([m.avg_ep_ret for m in tail]))
                per_run[f"{learner}:{j}"] = {"cost": run_cost, "return": run_ret}
                costs.append(run_cost)
                rets.append(run_ret)
        fitness = float(np.mean(costs))
        mean_return = float(np.mean(rets))
        if not (math.isfinite(fitness) and math.isfinite(mean_return)):
            raise ArithmeticError("non-finite evaluation result")
    except Exception as exc:
        log.warning("candidate evaluation failed: %s", exc)
        return replace_candidate(candidate, fitness=math.inf,
                                 mean_return=-math.inf, failed=True)
    return replace_candidate(candidate, fitness=fitness, mean_return=mean_return,
                             per_run=per_run, failed=False)


def replace_candidate(candidate, **changes) -> Candidate:
    new = Candidate(candidate.params, candidate.fitness, candidate.mean_return,
                    candidate.per_run, candidate.failed)
    for k, v in changes.items():
        setattr(new, k, v)
    return new


def select(population: list[Candidate], config: EvolutionConfig) -> list[Candidate]:
    """Lowest fitness wins. When more than the survivor quota reached zero
    fitness, rank those by the return they achieved instead. Sorting is
    stable, so earlier candidates win exact ties."""
    k = config.n_survivors
    zeros = [c for c in population if c.fitness == 0.0]
    if len(zeros) > k:
        order = sorted(range(len(zeros)), key=lambda i: -zeros[i].mean_return)
        return [zeros[i] for i in order[:k]]
    order = sorted(range(len(population)), key=lambda i: population[i].fitness)
    return [population[i] for i in order[:k]]


def mutate(survivors: list[Candidate], config: EvolutionConfig, rng) -> list[Candidate]:
    """Survivors pass through unchanged; children perturb a uniform-random
    parent by Gaussian noise or by elementwise rescaling, half and half."""
    nxt = [replace_candidate(c) for c in survivors]
    lo, hi = config.scale_bounds
    while len(nxt) < config.population_size:
        parent = survivors[int(rng.integers(len(survivors)))]
        theta = parent.params
        if rng.random() < 0.5:
            child = theta + config.gaussian_sigma * rng.standard_normal(theta.shape)
        else:
            child = theta * rng.uniform(lo, hi, size=theta.shape)
        nxt.append(Candidate(child))
    return nxt


def _evaluate_population(population, config, train_fn):
    todo = [i for i, c in enumerate(population) if c.fitness is None]
    if config.workers > 1 and len(todo) > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            futures = {i: pool.submit(evaluate, population[i], config, train_fn)
                       for i in todo}
            for i, fut in futures.items():
                population[i] = fut.result()
    else:
        for i in todo:
            population[i] = evaluate(population[i], config, train_fn)
    return population


def best_of(candidates: list[Candidate]) -> Candidate:
    """Among violation-free candidates the highest return wins; otherwise
    the lowest fitness. First occurrence wins ties."""
    zeros = [c for c in candidates if c.fitness == 0.0]
    if zeros:
        return max(zeros, key=lambda c: c.mean_return)
    return min(candidates, key=lambda c: c.fitness)


def run_evolution(config: EvolutionConfig, train_fn=train, on_stage=None):
    """Full search. Returns (best_candidate, history rows).

    Deterministic for a fixed config: population init, mutation draws and
    all inner training seeds derive from the master seed.
    """
    rng = np.random.default_rng(derive_seed(config.master_seed, "population"))
    population = init_population(config, rng)
    history: list[StageRecord] = []
    seen: list[Candidate] = []
    for stage in range(1, config.n_stages + 1):
        population = _evaluate_population(population, config, train_fn)
        survivors = select(population, config)
        survivor_ids = {id(c) for c in survivors}
        for i, cand in enumerate(population):
            history.append(StageRecord(stage, i, cand.fitness, cand.mean_return,
                                       id(cand) in survivor_ids))
        seen.extend(population)
        if on_stage is not None:
            on_stage(stage, population, survivors)
        if stage < config.n_stages:
            population = mutate(survivors, config, rng)
    return best_of(seen), history


def write_history_csv(path, history, meta: dict | None = None):
    rows = [[h.stage, h.candidate_id, h.fitness, h.mean_return, h.is_survivor]
            for h in history]
    write_csv(path, HISTORY_FIELDS, rows, meta)


def write_best_json(path, best: Candidate, config: EvolutionConfig):
    doc = {
        "params": [float(v) for v in best.params],
        "fitness": best.fitness,
        "mean_return": best.mean_return,
        "per_run": best.per_run,
        "provenance": {
            "config_hash": config_hash(config),
            "master_seed": config.master_seed,
            "learners": list(config.learners),
            "eval_seeds": config.eval_seeds,
            "hidden_activation": config.hidden_activation,
        },
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)


def load_params_json(path) -> np.ndarray:
    """Accept either a bare JSON list of weights or a best-candidate file."""
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if isinstance(doc, dict):
        doc = doc["params"]
    return np.asarray(doc, dtype=np.float64)
