"""Batch experiment orchestration: INI configs, seed fan-out, per-run and
aggregate CSVs, and the negative-cost-limit sweep.

Every CSV written here carries a '# config_hash=...' comment, and results
with different hashes refuse to aggregate, so a table can always be traced
to the exact configuration that produced it.
"""

from __future__ import annotations

import configparser
import dataclasses
import logging
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .costs import CostFn, intrinsic_architecture
from .csvio import read_csv, write_csv
from .evolve import EvolutionConfig, load_params_json
from .learners import ALGOS, IterationMetrics, TrainConfig, train
from .nets import MlpParams
from .seeding import canonical, config_hash, derive_seed
from .world import WorldConfig

log = logging.getLogger(__name__)

_NAME_OK = set("abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789._-")


@dataclass
class CostSpec:
    """Declarative description of a cost function, loadable from a config."""

    kind: str = "zero"
    margin_k: float = 1.0
    use_extrinsic: bool = True
    params_file: str = ""
    hidden_activation: str = "sigmoid"

    def build(self) -> CostFn:
        params = None
        if self.kind == "intrinsic_net":
            if not self.params_file:
                raise ValueError("intrinsic_net cost needs params_file")
            values = load_params_json(self.params_file)
            params = MlpParams(intrinsic_architecture(self.hidden_activation), values)
        return CostFn(self.kind, params=params, margin_k=self.margin_k,
                      use_extrinsic=self.use_extrinsic)


@dataclass
class ExperimentSpec:
    name: str = "experiment"
    algos: tuple[str, ...] = ("ppo_lagrangian",)
    seeds: tuple[int, ...] = (0,)
    output_dir: str = "runs"
    env: WorldConfig = field(default_factory=WorldConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    cost: CostSpec = field(default_factory=CostSpec)

    def __post_init__(self):
        if not self.name or not set(self.name) <= _NAME_OK:
            raise ValueError(f"experiment name must be filesystem-safe, got {self.name!r}")
        if not self.seeds:
            raise ValueError("need at least one seed")
        self.algos = tuple(self.algos)
        self.seeds = tuple(int(s) for s in self.seeds)
        for a in self.algos:
            if a not in ALGOS:
                raise ValueError(f"unknown algorithm {a!r}")


@dataclass
class AggregateResult:
    """Per-iteration mean and std across seeds for one algorithm."""

    algo: str
    n_seeds: int
    iterations: np.ndarray
    mean: dict[str, np.ndarray]
    std: dict[str, np.ndarray]
    config_hash: str = ""


_METRIC_FIELDS = IterationMetrics.CSV_FIELDS[1:]  # all but the iteration column


# --- config files ----------------------------------------------------------


def _coerce(field_obj, raw: str):
    t = field_obj.type
    if t in (int, "int"):
        return int(raw)
    if t in (float, "float"):
        return float(raw)
    if t in (bool, "bool"):
        low = raw.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if t in (str, "str"):
        return raw.strip()
    # remaining config fields are tuples of ints, floats or strings
    parts = [p.strip() for p in raw.split(",") if p.strip()]
    hint = str(t)
    if "int" in hint:
        return tuple(int(p) for p in parts)
    if "float" in hint:
        return tuple(float(p) for p in parts)
    return tuple(parts)


def apply_section(instance, section) -> None:
    """Overwrite dataclass fields from one INI section, with type coercion."""
    by_name = {f.name: f for f in dataclasses.fields(instance)}
    for key, raw in section.items():
        if key not in by_name:
            raise ValueError(f"unknown config key {key!r} for {type(instance).__name__}")
        setattr(instance, key, _coerce(by_name[key], raw))
    # re-run validation
    post = getattr(instance, "__post_init__", None)
    if post is not None:
        post()


def load_experiment_config(path) -> ExperimentSpec:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    read = parser.read(path)
    if not read:
        raise FileNotFoundError(path)
    spec = ExperimentSpec()
    if parser.has_section("experiment"):
        apply_section(spec, parser["experiment"])
    if parser.has_section("env"):
        apply_section(spec.env, parser["env"])
    if parser.has_section("train"):
        apply_section(spec.train, parser["train"])
    if parser.has_section("cost"):
        apply_section(spec.cost, parser["cost"])
    spec.__post_init__()
    return spec


def save_experiment_config(path, spec: ExperimentSpec):
    parser = configparser.ConfigParser()
    parser["experiment"] = {
        "name": spec.name,
        "algos": ", ".join(spec.algos),
        "seeds": ", ".join(str(s) for s in spec.seeds),
        "output_dir": spec.output_dir,
    }
    for section, obj in (("env", spec.env), ("train", spec.train), ("cost", spec.cost)):
        parser[section] = {}
        for f in dataclasses.fields(obj):
            v = getattr(obj, f.name)
            if isinstance(v, tuple):
                parser[section][f.name] = ", ".join(str(x) for x in v)
            elif isinstance(v, bool):
                parser[section][f.name] = "true" if v else "false"
            else:
                parser[section][f.name] = str(v)
    with open(path, "w", encoding="utf-8") as fh:
        parser.write(fh)


def load_evolution_config(path) -> EvolutionConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    read = parser.read(path)
    if not read:
        raise FileNotFoundError(path)
    config = EvolutionConfig()
    if parser.has_section("evolution"):
        apply_section(config, parser["evolution"])
    if parser.has_section("env"):
        apply_section(config.env, parser["env"])
    if parser.has_section("train"):
        apply_section(config.train, parser["train"])
    config.__post_init__()
    return config


def load_sweep_limits(path) -> list[float]:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    if not parser.read(path):
        raise FileNotFoundError(path)
    if not parser.has_option("sweep", "cost_limits"):
        raise ValueError("config has no [sweep] cost_limits entry")
    raw = parser.get("sweep", "cost_limits")
    return [float(p.strip()) for p in raw.split(",") if p.strip()]


# --- running ---------------------------------------------------------------


def experiment_hash(spec: ExperimentSpec) -> str:
    """Configuration identity for result files. Where the files land has no
    bearing on what the numbers are, so output_dir stays out of the hash."""
    doc = canonical(spec)
    doc.pop("output_dir", None)
    return config_hash(doc)


def run_name(spec_name, algo, seed) -> str:
    return f"{spec_name}_{algo}_s{seed}"


def metrics_rows(metrics: list[IterationMetrics]):
    return [m.row() for m in metrics]


def write_metrics_csv(path, metrics, meta):
    write_csv(path, IterationMetrics.CSV_FIELDS, metrics_rows(metrics), meta)


def _run_one(spec: ExperimentSpec, algo: str, seed: int, train_fn):
    cost_fn = spec.cost.build()
    run_seed = derive_seed(seed, spec.name, algo)
    _, metrics = train_fn(algo, spec.env, cost_fn, spec.train, run_seed)
    return metrics


def run_experiment(spec: ExperimentSpec, workers: int = 1, train_fn=train):
    """Train every algorithm on every seed; write one CSV per run plus one
    aggregate CSV. Returns ({algo: AggregateResult}, failures) where
    failures lists (algo, seed, message) for runs that raised."""
    os.makedirs(spec.output_dir, exist_ok=True)
    chash = experiment_hash(spec)
    jobs = [(algo, seed) for algo in spec.algos for seed in spec.seeds]
    outcomes: dict[tuple, list[IterationMetrics]] = {}
    failures = []

    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = {job: pool.submit(_run_one, spec, job[0], job[1], train_fn)
                       for job in jobs}
            for job, fut in futures.items():
                try:
                    outcomes[job] = fut.result()
                except Exception as exc:
                    log.warning("run %s failed: %s", job, exc)
                    failures.append((job[0], job[1], str(exc)))
    else:
        for job in jobs:
            try:
                outcomes[job] = _run_one(spec, job[0], job[1], train_fn)
            except Exception as exc:
                log.warning("run %s failed: %s", job, exc)
                failures.append((job[0], job[1], str(exc)))

    for (algo, seed), metrics in outcomes.items():
        meta = {"config_hash": chash, "experiment": spec.name, "algo": algo, "seed": seed}
        path = os.path.join(spec.output_dir, run_name(spec.name, algo, seed) + ".csv")
        write_metrics_csv(path, metrics, meta)

    results = {}
    for algo in spec.algos:
        series = [outcomes[(algo, seed)] for seed in spec.seeds if (algo, seed) in outcomes]
        if series:
            results[algo] = aggregate_metrics(algo, series, chash)
    if results:
        agg_path = os.path.join(spec.output_dir, f"{spec.name}_aggregate.csv")
        write_aggregate_csv(agg_path, results, {"config_hash": chash, "experiment": spec.name})
    return results, failures


def aggregate_metrics(algo, series: list[list[IterationMetrics]], chash="") -> AggregateResult:
    """Mean and std (population) across seeds, per iteration. A single seed
    aggregates to exactly its own values with zero std."""
    n_iters = min(len(s) for s in series)
    data = np.array([[m.row()[1:] for m in s[:n_iters]] for s in series])  # seed x iter x field
    mean = {f: data[:, :, i].mean(axis=0) for i, f in enumerate(_METRIC_FIELDS)}
    std = {f: data[:, :, i].std(axis=0) for i, f in enumerate(_METRIC_FIELDS)}
    return AggregateResult(algo, len(series), np.arange(n_iters), mean, std, chash)


def write_aggregate_csv(path, results: dict[str, AggregateResult], meta):
    header = ["algo", "iter", "n_seeds"]
    for f in _METRIC_FIELDS:
        header += [f"{f}_mean", f"{f}_std"]
    rows = []
    for algo in sorted(results):
        agg = results[algo]
        for i in agg.iterations:
            row = [algo, int(i), agg.n_seeds]
            for f in _METRIC_FIELDS:
                row += [float(agg.mean[f][i]), float(agg.std[f][i])]
            rows.append(row)
    write_csv(path, header, rows, meta)


def read_aggregates(paths) -> dict[str, dict]:
    """Read aggregate CSVs, refusing to merge mismatched configurations.

    The algo column stays a string; every other column parses to floats."""
    merged = {}
    hashes = set()
    for path in paths:
        header, rows, meta = read_csv(path)
        hashes.add(meta.get("config_hash", ""))
        if len(hashes) > 1:
            raise ValueError("refusing to merge results with different config hashes")
        cols = {}
        for i, name in enumerate(header):
            cells = [r[i] for r in rows]
            cols[name] = cells if name == "algo" else [float(c) for c in cells]
        merged[path] = {"columns": cols, "meta": meta}
    return merged


# --- the cost-limit sweep --------------------------------------------------

SWEEP_FIELDS = ("cost_limit", "algo", "n_seeds", "final_avg_ep_ret_mean",
                "final_avg_ep_ret_std", "final_avg_ep_cost_ex_mean",
                "final_avg_ep_cost_ex_std", "final_cost_rate_mean")


def _limit_tag(limit: float) -> str:
    return ("m" if limit < 0 else "p") + f"{abs(limit):g}".replace(".", "_")


def sweep_cost_limit(spec: ExperimentSpec, limits, workers: int = 1, train_fn=train):
    """Run the experiment once per cost limit. Duplicate limits are dropped
    with a warning; an empty list is an error. Writes a comparison table
    keyed by limit and algorithm."""
    unique = []
    for lim in limits:
        lim = float(lim)
        if lim in unique:
            warnings.warn(f"duplicate cost limit {lim} dropped from sweep")
            continue
        unique.append(lim)
    if not unique:
        raise ValueError("sweep needs at least one cost limit")

    all_results = {}
    all_failures = []
    rows = []
    for lim in unique:
        sub = ExperimentSpec(
            name=f"{spec.name}_d{_limit_tag(lim)}",
            algos=spec.algos,
            seeds=spec.seeds,
            output_dir=spec.output_dir,
            env=spec.env,
            train=dataclasses.replace(spec.train, cost_limit=lim),
            cost=spec.cost,
        )
        results, failures = run_experiment(sub, workers=workers, train_fn=train_fn)
        all_results[lim] = results
        all_failures.extend((lim,) + f for f in failures)
        for algo, agg in sorted(results.items()):
            last = agg.iterations[-1]
            rows.append([
                lim, algo, agg.n_seeds,
                float(agg.mean["avg_ep_ret"][last]), float(agg.std["avg_ep_ret"][last]),
                float(agg.mean["avg_ep_cost_ex"][last]), float(agg.std["avg_ep_cost_ex"][last]),
                float(agg.mean["cost_rate"][last]),
            ])
    table_path = os.path.join(spec.output_dir, f"{spec.name}_sweep.csv")
    write_csv(table_path, SWEEP_FIELDS, rows,
              {"config_hash": experiment_hash(spec), "experiment": spec.name})
    return all_results, all_failures
