"""Command-line entry point.

Verbs:
  train    run the algorithms of an experiment config across its seeds
  evolve   run the evolutionary cost search from an evolution config
  sweep    repeat an experiment across the cost limits in the config
  heatmap  evaluate an intrinsic cost net over the arena and dump a CSV
  plot     render SVG figures from harness CSVs
  report   summarize the aggregate CSVs under a directory
"""

from __future__ import annotations

import argparse
import dataclasses
import glob
import logging
import os
import sys

import numpy as np

from . import experiments, plots
from .costs import heatmap, heatmap_rows, intrinsic_architecture
from .csvio import read_csv, write_csv
from .evolve import (
    load_params_json,
    run_evolution,
    write_best_json,
    write_history_csv,
)
from .nets import MlpParams
from .seeding import config_hash
from .world import World, WorldConfig

log = logging.getLogger("safelab")


def _add_common(p):
    p.add_argument("--config", required=True, help="INI config file")
    p.add_argument("--seed", type=int, default=None, help="override the master seed")
    p.add_argument("--workers", type=int, default=1, help="parallel worker processes")
    p.add_argument("--out", default=None, help="override the output directory")


def cmd_train(args):
    spec = experiments.load_experiment_config(args.config)
    if args.seed is not None:
        spec.seeds = (args.seed,)
    if args.out:
        spec.output_dir = args.out
    log.info("experiment %s: %d algos x %d seeds -> %s",
             spec.name, len(spec.algos), len(spec.seeds), spec.output_dir)
    results, failures = experiments.run_experiment(spec, workers=args.workers)
    for algo, agg in sorted(results.items()):
        last = agg.iterations[-1]
        log.info("%s: final return %.2f, final violation cost %.3f",
                 algo, agg.mean["avg_ep_ret"][last], agg.mean["avg_ep_cost_ex"][last])
    for algo, seed, msg in failures:
        log.error("failed: %s seed %s: %s", algo, seed, msg)
    return 1 if failures else 0


def cmd_evolve(args):
    config = experiments.load_evolution_config(args.config)
    if args.seed is not None:
        config.master_seed = args.seed
    if args.workers != 1:
        config.workers = args.workers
    out_dir = args.out or "evolution"
    os.makedirs(out_dir, exist_ok=True)

    def on_stage(stage, population, survivors):
        best = min(c.fitness for c in population)
        log.info("stage %d/%d: best fitness %.4f, %d survivors",
                 stage, config.n_stages, best, len(survivors))

    best, history = run_evolution(config, on_stage=on_stage)
    meta = {"config_hash": config_hash(config), "master_seed": config.master_seed}
    write_history_csv(os.path.join(out_dir, "history.csv"), history, meta)
    write_best_json(os.path.join(out_dir, "best.json"), best, config)
    plots.plot(os.path.join(out_dir, "history.csv"), "evolution_scatter",
               os.path.join(out_dir, "history.svg"))
    log.info("best candidate: fitness %.4f, mean return %.2f -> %s",
             best.fitness, best.mean_return, os.path.join(out_dir, "best.json"))
    return 0


def cmd_sweep(args):
    spec = experiments.load_experiment_config(args.config)
    limits = experiments.load_sweep_limits(args.config)
    if args.seed is not None:
        spec.seeds = (args.seed,)
    if args.out:
        spec.output_dir = args.out
    log.info("sweep over cost limits %s", limits)
    _, failures = experiments.sweep_cost_limit(spec, limits, workers=args.workers)
    for item in failures:
        log.error("failed: %s", item)
    return 1 if failures else 0


def cmd_heatmap(args):
    spec = experiments.load_experiment_config(args.config)
    values = load_params_json(args.params)
    params = MlpParams(intrinsic_architecture(spec.cost.hidden_activation), values)
    env = dataclasses.replace(spec.env, n_obstacles=1)
    world = World(env)
    if args.layout_seed is not None:
        state, _ = world.reset(args.layout_seed)
    else:
        state, _ = world.reset(env.layout_seed)
        state.obstacle_positions = [(0.0, 0.0)]  # centered single obstacle
    xs, ys, vals = heatmap(params, env, state, args.resolution)
    out_dir = args.out or "."
    os.makedirs(out_dir, exist_ok=True)
    csv_path = os.path.join(out_dir, "heatmap.csv")
    write_csv(csv_path, ["x", "y", "value"], heatmap_rows(xs, ys, vals),
              {"config_hash": config_hash(spec), "resolution": args.resolution})
    svg_path = os.path.join(out_dir, "heatmap.svg")
    plots.plot(csv_path, "heatmap", svg_path)
    log.info("wrote %s and %s", csv_path, svg_path)
    return 0


def cmd_plot(args):
    out = args.out or (os.path.splitext(args.csvs[0])[0] + ".svg")
    plots.plot(args.csvs, args.kind, out, title=args.title)
    log.info("wrote %s", out)
    return 0


def cmd_report(args):
    paths = sorted(glob.glob(os.path.join(args.dir, "*_aggregate.csv")))
    if not paths:
        log.error("no aggregate CSVs under %s", args.dir)
        return 1
    rows = []
    for path in paths:
        header, raw, _ = read_csv(path)
        ia = header.index("algo")
        ii = header.index("iter")
        by_algo = {}
        for r in raw:
            by_algo.setdefault(r[ia], []).append(r)
        for algo, rs in sorted(by_algo.items()):
            last = max(rs, key=lambda r: int(r[ii]))
            rows.append([
                os.path.basename(path)[:-len("_aggregate.csv")],
                algo,
                last[header.index("n_seeds")],
                float(last[header.index("avg_ep_ret_mean")]),
                float(last[header.index("avg_ep_cost_ex_mean")]),
                float(last[header.index("cost_rate_mean")]),
            ])
    header_out = ["experiment", "algo", "n_seeds", "final_return",
                  "final_violation_cost", "final_cost_rate"]
    widths = [max(len(str(r[i])) for r in rows + [header_out]) for i in range(len(header_out))]
    print("  ".join(h.ljust(w) for h, w in zip(header_out, widths)))
    for r in rows:
        print("  ".join(str(c).ljust(w) for c, w in zip(r, widths)))
    out_path = os.path.join(args.dir, "report.csv")
    write_csv(out_path, header_out, rows, {})
    log.info("wrote %s", out_path)
    return 0


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="safelab",
        description="Constrained navigation experiments: train, evolve cost "
                    "functions, sweep limits, and render results.",
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run an experiment config")
    _add_common(p)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("evolve", help="run the evolutionary cost search")
    _add_common(p)
    p.set_defaults(fn=cmd_evolve)

    p = sub.add_parser("sweep", help="repeat an experiment across cost limits")
    _add_common(p)
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("heatmap", help="evaluate a cost net over the arena")
    _add_common(p)
    p.add_argument("--params", required=True, help="JSON weight vector or best.json")
    p.add_argument("--resolution", type=int, default=41)
    p.add_argument("--layout-seed", type=int, default=None,
                   help="sample the obstacle layout instead of centering it")
    p.set_defaults(fn=cmd_heatmap)

    p = sub.add_parser("plot", help="render an SVG from harness CSVs")
    p.add_argument("csvs", nargs="+")
    p.add_argument("--kind", required=True, choices=plots.PLOT_KINDS)
    p.add_argument("--out", default=None)
    p.add_argument("--title", default=None)
    p.set_defaults(fn=cmd_plot)

    p = sub.add_parser("report", help="summarize aggregate CSVs in a directory")
    p.add_argument("--dir", required=True)
    p.set_defaults(fn=cmd_report)

    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
