"""Experiment harness: config files, seed fan-out, CSVs, the limit sweep.

A stub train function whose metrics are pure arithmetic on (algo, seed)
stands in for real training, so file layout, aggregation arithmetic and
determinism can be checked quickly and exactly.
"""

import dataclasses
import json

import numpy as np
import pytest

from safelab.costs import intrinsic_architecture
from safelab.csvio import columns, read_csv
from safelab.experiments import (
    experiment_hash,
    CostSpec,
    ExperimentSpec,
    aggregate_metrics,
    load_experiment_config,
    load_evolution_config,
    load_sweep_limits,
    read_aggregates,
    run_experiment,
    run_name,
    save_experiment_config,
    sweep_cost_limit,
    write_aggregate_csv,
)
from safelab.learners import IterationMetrics, TrainConfig
from safelab.seeding import config_hash, derive_seed
from safelab.world import WorldConfig

PARAM_DIM = intrinsic_architecture().param_count()


def stub_train(algo, env, cost_fn, train_cfg, seed):
    """Metrics are arithmetic on (algo, seed), so aggregates are checkable."""
    base = float(seed % 7) + (0.0 if algo == "ppo" else 10.0)
    metrics = [
        IterationMetrics(i, base + i, base * 0.1, base * 0.2, 0.01 * base,
                         0.5, 0.001)
        for i in range(train_cfg.iterations)
    ]
    return None, metrics


def recording_train(calls):
    def fn(algo, env, cost_fn, train_cfg, seed):
        calls.append((algo, seed, cost_fn.kind, train_cfg.cost_limit))
        return stub_train(algo, env, cost_fn, train_cfg, seed)
    return fn


def small_spec(tmp_path, **overrides):
    defaults = dict(
        name="probe",
        algos=("ppo", "cpo"),
        seeds=(0, 1),
        output_dir=str(tmp_path / "runs"),
        train=TrainConfig(iterations=3, steps_per_iteration=100),
        env=WorldConfig(horizon=50),
    )
    defaults.update(overrides)
    return ExperimentSpec(**defaults)


class TestCostSpec:
    def test_builds_hand_designed_kinds(self):
        assert CostSpec(kind="zero").build().kind == "zero"
        fn = CostSpec(kind="margin", margin_k=3.0).build()
        assert fn.kind == "margin"
        assert fn.margin_k == 3.0

    def test_intrinsic_needs_params_file(self):
        with pytest.raises(ValueError, match="params_file"):
            CostSpec(kind="intrinsic_net").build()

    def test_intrinsic_loads_weights(self, tmp_path):
        path = tmp_path / "weights.json"
        path.write_text(json.dumps([0.1] * PARAM_DIM))
        fn = CostSpec(kind="intrinsic_net", params_file=str(path),
                      use_extrinsic=False).build()
        assert fn.kind == "intrinsic_net"
        assert not fn.use_extrinsic
        assert np.allclose(fn.params.values, 0.1)


class TestExperimentSpec:
    def test_rejects_unsafe_name(self, tmp_path):
        with pytest.raises(ValueError, match="filesystem-safe"):
            small_spec(tmp_path, name="bad name/with slash")

    def test_rejects_empty_seeds(self, tmp_path):
        with pytest.raises(ValueError, match="seed"):
            small_spec(tmp_path, seeds=())

    def test_rejects_unknown_algo(self, tmp_path):
        with pytest.raises(ValueError, match="unknown algorithm"):
            small_spec(tmp_path, algos=("ppo", "sac"))

    def test_run_name_format(self):
        assert run_name("probe", "cpo", 3) == "probe_cpo_s3"


class TestConfigFiles:
    def test_save_load_round_trip(self, tmp_path):
        spec = small_spec(tmp_path, seeds=(2, 5, 8),
                          cost=CostSpec(kind="margin", margin_k=2.0))
        path = tmp_path / "exp.ini"
        save_experiment_config(path, spec)
        loaded = load_experiment_config(path)
        assert loaded == spec
        assert config_hash(loaded) == config_hash(spec)

    def test_hand_written_sections(self, tmp_path):
        path = tmp_path / "exp.ini"
        path.write_text(
            "[experiment]\n"
            "name = sweep1\n"
            "algos = ppo_lagrangian, cpo\n"
            "seeds = 0, 1, 2\n"
            "[env]\n"
            "horizon = 80\n"
            "n_obstacles = 2\n"
            "task = push\n"
            "[train]\n"
            "iterations = 5\n"
            "cost_limit = -0.5\n"
            "hidden_sizes = 16, 16\n"
            "[cost]\n"
            "kind = margin\n"
            "margin_k = 3.0\n"
            "use_extrinsic = true\n"
        )
        spec = load_experiment_config(path)
        assert spec.name == "sweep1"
        assert spec.algos == ("ppo_lagrangian", "cpo")
        assert spec.seeds == (0, 1, 2)
        assert spec.env.horizon == 80
        assert spec.env.task == "push"
        assert spec.train.cost_limit == -0.5
        assert spec.train.hidden_sizes == (16, 16)
        assert spec.cost.kind == "margin"
        assert spec.cost.margin_k == 3.0

    def test_inline_comments_stripped(self, tmp_path):
        path = tmp_path / "exp.ini"
        path.write_text("[train]\niterations = 7  # short run\n")
        assert load_experiment_config(path).train.iterations == 7

    def test_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "exp.ini"
        path.write_text("[train]\nlearning_rate = 0.01\n")
        with pytest.raises(ValueError, match="unknown config key"):
            load_experiment_config(path)

    def test_bad_section_value_rejected(self, tmp_path):
        path = tmp_path / "exp.ini"
        path.write_text("[env]\ntask = orbit\n")
        with pytest.raises(ValueError, match="task"):
            load_experiment_config(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_experiment_config(tmp_path / "nope.ini")

    def test_evolution_config_sections(self, tmp_path):
        path = tmp_path / "evo.ini"
        path.write_text(
            "[evolution]\n"
            "population_size = 4\n"
            "n_stages = 2\n"
            "master_seed = 9\n"
            "learners = ppo_lagrangian\n"
            "[train]\n"
            "iterations = 6\n"
        )
        cfg = load_evolution_config(path)
        assert cfg.population_size == 4
        assert cfg.n_stages == 2
        assert cfg.master_seed == 9
        assert cfg.learners == ("ppo_lagrangian",)
        assert cfg.train.iterations == 6

    def test_sweep_limits_parse(self, tmp_path):
        path = tmp_path / "sweep.ini"
        path.write_text("[sweep]\ncost_limits = 0, -0.1, -1.0\n")
        assert load_sweep_limits(path) == [0.0, -0.1, -1.0]

    def test_sweep_limits_missing_entry(self, tmp_path):
        path = tmp_path / "sweep.ini"
        path.write_text("[sweep]\nother = 1\n")
        with pytest.raises(ValueError, match="cost_limits"):
            load_sweep_limits(path)


class TestRunExperiment:
    def test_writes_per_run_and_aggregate_files(self, tmp_path):
        spec = small_spec(tmp_path)
        results, failures = run_experiment(spec, train_fn=stub_train)
        assert failures == []
        out = tmp_path / "runs"
        for algo in spec.algos:
            for seed in spec.seeds:
                assert (out / f"probe_{algo}_s{seed}.csv").exists()
        assert (out / "probe_aggregate.csv").exists()
        assert set(results) == {"ppo", "cpo"}
        assert results["ppo"].n_seeds == 2

    def test_run_seeds_are_derived(self, tmp_path):
        calls = []
        spec = small_spec(tmp_path)
        run_experiment(spec, train_fn=recording_train(calls))
        got = {(a, s) for a, s, _, _ in calls}
        want = {(algo, derive_seed(seed, "probe", algo))
                for algo in spec.algos for seed in spec.seeds}
        assert got == want

    def test_per_run_csv_content_and_meta(self, tmp_path):
        spec = small_spec(tmp_path, algos=("ppo",), seeds=(3,))
        run_experiment(spec, train_fn=stub_train)
        path = tmp_path / "runs" / "probe_ppo_s3.csv"
        cols, meta = columns(path, ["iter", "avg_ep_ret", "lambda"])
        assert meta["algo"] == "ppo"
        assert meta["seed"] == "3"
        assert meta["config_hash"] == experiment_hash(spec)
        run_seed = derive_seed(3, "probe", "ppo")
        base = float(run_seed % 7)
        assert cols["iter"] == [0.0, 1.0, 2.0]
        assert cols["avg_ep_ret"] == [base, base + 1, base + 2]

    def test_single_seed_aggregate_is_exact(self, tmp_path):
        spec = small_spec(tmp_path, algos=("cpo",), seeds=(4,))
        results, _ = run_experiment(spec, train_fn=stub_train)
        agg = results["cpo"]
        run_seed = derive_seed(4, "probe", "cpo")
        base = float(run_seed % 7) + 10.0
        assert agg.mean["avg_ep_ret"].tolist() == [base, base + 1, base + 2]
        assert agg.std["avg_ep_ret"].tolist() == [0.0, 0.0, 0.0]

    def test_failure_recorded_others_survive(self, tmp_path):
        def flaky(algo, env, cost_fn, train_cfg, seed):
            if algo == "cpo":
                raise RuntimeError("exploded")
            return stub_train(algo, env, cost_fn, train_cfg, seed)

        spec = small_spec(tmp_path)
        results, failures = run_experiment(spec, train_fn=flaky)
        assert sorted(f[0] for f in failures) == ["cpo", "cpo"]
        assert "exploded" in failures[0][2]
        assert set(results) == {"ppo"}

    def test_csv_bytes_deterministic(self, tmp_path):
        spec_a = small_spec(tmp_path, output_dir=str(tmp_path / "a"))
        spec_b = small_spec(tmp_path, output_dir=str(tmp_path / "b"))
        run_experiment(spec_a, train_fn=stub_train)
        run_experiment(spec_b, train_fn=stub_train)
        for algo in ("ppo", "cpo"):
            fa = (tmp_path / "a" / f"probe_{algo}_s0.csv").read_bytes()
            fb = (tmp_path / "b" / f"probe_{algo}_s0.csv").read_bytes()
            assert fa == fb

    def test_pool_matches_serial(self, tmp_path):
        spec_a = small_spec(tmp_path, output_dir=str(tmp_path / "serial"))
        spec_b = small_spec(tmp_path, output_dir=str(tmp_path / "pooled"))
        run_experiment(spec_a, workers=1, train_fn=stub_train)
        run_experiment(spec_b, workers=2, train_fn=stub_train)
        fa = (tmp_path / "serial" / "probe_aggregate.csv").read_bytes()
        fb = (tmp_path / "pooled" / "probe_aggregate.csv").read_bytes()
        assert fa == fb


def make_metrics(values):
    return [IterationMetrics(i, v, v * 0.1, v * 0.2, 0.0, 0.0, 0.0)
            for i, v in enumerate(values)]


class TestAggregation:
    def test_two_seed_mean_and_population_std(self):
        agg = aggregate_metrics("ppo", [make_metrics([1.0, 2.0]),
                                        make_metrics([3.0, 6.0])])
        assert agg.mean["avg_ep_ret"].tolist() == [2.0, 4.0]
        assert agg.std["avg_ep_ret"].tolist() == [1.0, 2.0]
        assert agg.n_seeds == 2

    def test_unequal_lengths_truncate_to_shortest(self):
        agg = aggregate_metrics("ppo", [make_metrics([1.0, 2.0, 3.0]),
                                        make_metrics([5.0])])
        assert agg.iterations.tolist() == [0]
        assert agg.mean["avg_ep_ret"].tolist() == [3.0]

    def test_aggregate_csv_round_trip(self, tmp_path):
        agg = aggregate_metrics("ppo", [make_metrics([1.0, 2.0]),
                                        make_metrics([3.0, 6.0])], chash="abc")
        path = tmp_path / "agg.csv"
        write_aggregate_csv(path, {"ppo": agg}, {"config_hash": "abc"})
        cols, meta = columns(path, ["iter", "avg_ep_ret_mean", "avg_ep_ret_std"])
        assert meta["config_hash"] == "abc"
        assert cols["avg_ep_ret_mean"] == [2.0, 4.0]
        assert cols["avg_ep_ret_std"] == [1.0, 2.0]

    def test_read_aggregates_refuses_hash_mismatch(self, tmp_path):
        agg = aggregate_metrics("ppo", [make_metrics([1.0])])
        write_aggregate_csv(tmp_path / "a.csv", {"ppo": agg}, {"config_hash": "aaa"})
        write_aggregate_csv(tmp_path / "b.csv", {"ppo": agg}, {"config_hash": "aaa"})
        write_aggregate_csv(tmp_path / "c.csv", {"ppo": agg}, {"config_hash": "ccc"})
        merged = read_aggregates([tmp_path / "a.csv", tmp_path / "b.csv"])
        assert len(merged) == 2
        with pytest.raises(ValueError, match="different config hashes"):
            read_aggregates([tmp_path / "a.csv", tmp_path / "c.csv"])


class TestSweep:
    def test_runs_each_limit_and_writes_table(self, tmp_path):
        calls = []
        spec = small_spec(tmp_path, algos=("ppo_lagrangian",), seeds=(0,))
        results, failures = sweep_cost_limit(spec, [0.0, -0.1, -1.0],
                                             train_fn=recording_train(calls))
        assert failures == []
        assert sorted(results) == [-1.0, -0.1, 0.0]
        limits_seen = sorted({c[3] for c in calls})
        assert limits_seen == [-1.0, -0.1, 0.0]
        out = tmp_path / "runs"
        assert (out / "probe_sweep.csv").exists()
        assert (out / "probe_dp0_ppo_lagrangian_s0.csv").exists()
        assert (out / "probe_dm0_1_ppo_lagrangian_s0.csv").exists()
        assert (out / "probe_dm1_ppo_lagrangian_s0.csv").exists()
        cols, _ = columns(out / "probe_sweep.csv",
                          ["cost_limit", "final_avg_ep_ret_mean"])
        assert cols["cost_limit"] == [0.0, -0.1, -1.0]

    def test_duplicate_limit_warns_and_drops(self, tmp_path):
        spec = small_spec(tmp_path, algos=("ppo",), seeds=(0,))
        with pytest.warns(UserWarning, match="duplicate cost limit"):
            results, _ = sweep_cost_limit(spec, [0.0, 0.0], train_fn=stub_train)
        assert list(results) == [0.0]

    def test_empty_sweep_rejected(self, tmp_path):
        spec = small_spec(tmp_path)
        with pytest.raises(ValueError, match="at least one cost limit"):
            sweep_cost_limit(spec, [], train_fn=stub_train)
