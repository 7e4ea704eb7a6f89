"""SVG figure rendering from the harness CSV outputs."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .csvio import columns, read_csv

PLOT_KINDS = ("return_curve", "cost_curve", "heatmap", "evolution_scatter")

_CURVE_FIELD = {"return_curve": "avg_ep_ret", "cost_curve": "avg_ep_cost_ex"}
_CURVE_LABEL = {"return_curve": "average episode return",
                "cost_curve": "average episode violation cost"}


def _curve_series(path, fld):
    """One CSV gives one series: per-run files carry the field directly,
    aggregate files carry field_mean/field_std."""
    header, _, _ = read_csv(path)
    if header is None:
        raise ValueError(f"{path} has no header row")
    if fld in header:
        cols, meta = columns(path, ["iter", fld])
        return np.asarray(cols["iter"]), np.asarray(cols[fld]), None, meta
    if f"{fld}_mean" in header:
        cols, meta = columns(path, ["iter", f"{fld}_mean", f"{fld}_std"])
        return (np.asarray(cols["iter"]), np.asarray(cols[f"{fld}_mean"]),
                np.asarray(cols[f"{fld}_std"]), meta)
    raise ValueError(f"column {fld!r} missing in {path}")


def plot_curves(csv_paths, kind, out_path, title=None):
    fld = _CURVE_FIELD[kind]
    fig, ax = plt.subplots(figsize=(6, 4))
    series = [( path, *_curve_series(path, fld)) for path in csv_paths]
    if len(series) > 1 and all(s[3] is None for s in series):
        # several per-run curves: draw the cross-run mean with a std band
        n = min(len(s[2]) for s in series)
        ys = np.array([s[2][:n] for s in series])
        xs = series[0][1][:n]
        mean = ys.mean(axis=0)
        std = ys.std(axis=0)
        ax.plot(xs, mean, color="tab:blue", label=f"mean over {len(series)} runs")
        ax.fill_between(xs, mean - std, mean + std, color="tab:blue", alpha=0.25)
        ax.legend()
    else:
        for path, xs, ys, std, meta in series:
            label = meta.get("algo") or meta.get("experiment") or str(path)
            line, = ax.plot(xs, ys, label=label)
            if std is not None:
                ax.fill_between(xs, ys - std, ys + std,
                                color=line.get_color(), alpha=0.25)
        if len(series) > 1 or series[0][4]:
            ax.legend()
    if kind == "cost_curve":
        ax.axhline(0.0, color="red", linewidth=0.8)
    ax.set_xlabel("iteration")
    ax.set_ylabel(_CURVE_LABEL[kind])
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(out_path)
    plt.close(fig)
    return out_path


def plot_heatmap(csv_path, out_path, title=None):
    cols, _ = columns(csv_path, ["x", "y", "value"])
    xs = np.asarray(cols["x"])
    ys = np.asarray(cols["y"])
    vals = np.asarray(cols["value"])
    ux = np.unique(xs)
    uy = np.unique(ys)
    if len(ux) * len(uy) != len(vals):
        raise ValueError(f"{csv_path} rows do not form a full grid")
    grid = np.empty((len(uy), len(ux)))
    xi = {v: i for i, v in enumerate(ux)}
    yi = {v: i for i, v in enumerate(uy)}
    for x, y, v in zip(xs, ys, vals):
        grid[yi[y], xi[x]] = v
    fig, ax = plt.subplots(figsize=(5, 4.4))
    im = ax.pcolormesh(ux, uy, grid, shading="nearest", cmap="viridis")
    fig.colorbar(im, ax=ax, label="cost")
    ax.set_xlabel("x")
    ax.set_ylabel("y")
    ax.set_aspect("equal")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(out_path)
    plt.close(fig)
    return out_path


def plot_evolution_scatter(csv_path, out_path, title=None):
    cols, _ = columns(csv_path, ["stage", "fitness"])
    stages = np.asarray(cols["stage"])
    fitness = np.asarray(cols["fitness"])
    finite = np.isfinite(fitness)
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.set_facecolor("#202030")
    jitter = (np.arange(len(stages)) % 7 - 3) * 0.02
    ax.scatter(stages[finite] + jitter[finite], fitness[finite],
               s=18, color="white", edgecolors="none")
    ax.axhline(0.0, color="red", linewidth=1.2)
    ax.set_xlabel("stage")
    ax.set_ylabel("fitness (final violation cost)")
    ax.set_xticks(sorted(set(int(s) for s in stages)))
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(out_path)
    plt.close(fig)
    return out_path


def plot(csv_paths, kind, out_path, title=None):
    """Dispatch on plot kind; csv_paths is a list (curves) or a single path."""
    if kind not in PLOT_KINDS:
        raise ValueError(f"plot kind must be one of {PLOT_KINDS}, got {kind!r}")
    if kind in _CURVE_FIELD:
        paths = [csv_paths] if isinstance(csv_paths, (str, bytes)) else list(csv_paths)
        if not paths:
            raise ValueError("need at least one CSV to plot")
        return plot_curves(paths, kind, out_path, title)
    path = csv_paths[0] if isinstance(csv_paths, (list, tuple)) else csv_paths
    if kind == "heatmap":
        return plot_heatmap(path, out_path, title)
    return plot_evolution_scatter(path, out_path, title)
