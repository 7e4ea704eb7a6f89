"""Cost-function library.

The world charges its own violation cost (the extrinsic signal). Training
can add a shaping term on top: hand-built functions of the distance to the
nearest constraint object, or a tiny learnable network over the constraint
proximity readings whose weights an outer search can evolve. total_cost()
combines the two; an ablation flag drops the extrinsic part so a shaping
term can be studied on its own.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nets import Architecture, MlpParams, forward
from .world import WorldConfig, WorldState, lidar_from_pose

INTRINSIC_INPUT_DIM = 8
INTRINSIC_HIDDEN = 4

KINDS = ("zero", "intrinsic_net", "dense", "distance_change", "indicator_change", "margin")


def intrinsic_architecture(hidden_activation: str = "sigmoid") -> Architecture:
    """The evolvable cost net: constraint lidar in, one sigmoid unit out."""
    return Architecture(
        (INTRINSIC_INPUT_DIM, INTRINSIC_HIDDEN, 1),
        hidden_activation=hidden_activation,
        output_activation="sigmoid",
    )


def check_intrinsic_arch(params: MlpParams):
    if params.arch.in_dim != INTRINSIC_INPUT_DIM or params.arch.out_dim != 1:
        raise ValueError(
            f"intrinsic cost net must map {INTRINSIC_INPUT_DIM} proximity readings "
            f"to 1 output, got {params.arch.layer_sizes}"
        )
    if params.arch.output_activation != "sigmoid":
        raise ValueError("intrinsic cost net needs a sigmoid output unit")


@dataclass(frozen=True)
class CostInputs:
    """Per-step features handed from the world to a cost function."""

    constraint_lidar: np.ndarray
    prev_distance: float
    distance: float
    constraint_radius: float


@dataclass(frozen=True)
class CostFn:
    kind: str = "zero"
    params: MlpParams | None = None
    margin_k: float = 1.0
    use_extrinsic: bool = True

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"cost kind must be one of {KINDS}, got {self.kind!r}")
        if self.kind == "intrinsic_net":
            if self.params is None:
                raise ValueError("intrinsic_net cost needs params")
            check_intrinsic_arch(self.params)
        if self.kind == "margin" and self.margin_k < 1.0:
            raise ValueError("margin factor below 1 would shrink the true violation zone")


# --- the individual cost forms ---------------------------------------------


def intrinsic_cost(params: MlpParams, constraint_lidar) -> float:
    check_intrinsic_arch(params)
    lidar = np.asarray(constraint_lidar, dtype=np.float64)
    return float(forward(params, lidar)[0])


def intrinsic_cost_batch(params: MlpParams, lidar_batch) -> np.ndarray:
    check_intrinsic_arch(params)
    out = forward(params, np.asarray(lidar_batch, dtype=np.float64))
    return out[:, 0]


def dense_cost(prev_distance: float, distance: float) -> float:
    """Penalize any approach toward the nearest constraint object."""
    return max(prev_distance - distance, 0.0)


def distance_change_cost(prev_distance: float, distance: float) -> float:
    """Signed approach speed; negative when moving away."""
    return prev_distance - distance


def indicator_change_cost(prev_distance: float, distance: float) -> float:
    """1 whenever the distance did not increase (equality counts)."""
    return 1.0 if prev_distance - distance >= 0.0 else 0.0


def margin_cost(distance: float, constraint_radius: float, k: float) -> float:
    """Violation-shaped cost with the radius inflated k-fold."""
    return max(0.0, k * constraint_radius - distance)


def shaping_cost(cost_fn: CostFn, inputs: CostInputs) -> float:
    """The added (non-extrinsic) cost for one step."""
    if cost_fn.kind == "zero":
        return 0.0
    if cost_fn.kind == "intrinsic_net":
        return intrinsic_cost(cost_fn.params, inputs.constraint_lidar)
    if cost_fn.kind == "dense":
        return dense_cost(inputs.prev_distance, inputs.distance)
    if cost_fn.kind == "distance_change":
        return distance_change_cost(inputs.prev_distance, inputs.distance)
    if cost_fn.kind == "indicator_change":
        return indicator_change_cost(inputs.prev_distance, inputs.distance)
    return margin_cost(inputs.distance, inputs.constraint_radius, cost_fn.margin_k)


def total_cost(extrinsic: float, cost_fn: CostFn, inputs: CostInputs) -> float:
    """Extrinsic plus shaping cost; shaping alone when extrinsic is ablated."""
    if cost_fn.kind == "zero":
        return extrinsic if cost_fn.use_extrinsic else 0.0
    shaped = shaping_cost(cost_fn, inputs)
    return extrinsic + shaped if cost_fn.use_extrinsic else shaped


def shaping_cost_batch(cost_fn: CostFn, lidar_batch, prev_distances, distances,
                       constraint_radius) -> np.ndarray:
    """Vectorized shaping_cost over a trajectory. Hand-designed forms match
    the scalar path bit for bit; the net form matches to float rounding
    (batched matmul rounds differently than a vector product)."""
    prev_distances = np.asarray(prev_distances, dtype=np.float64)
    distances = np.asarray(distances, dtype=np.float64)
    if cost_fn.kind == "zero":
        return np.zeros_like(distances)
    if cost_fn.kind == "intrinsic_net":
        return intrinsic_cost_batch(cost_fn.params, lidar_batch)
    if cost_fn.kind == "dense":
        return np.maximum(prev_distances - distances, 0.0)
    if cost_fn.kind == "distance_change":
        return prev_distances - distances
    if cost_fn.kind == "indicator_change":
        return (prev_distances - distances >= 0.0).astype(np.float64)
    return np.maximum(0.0, cost_fn.margin_k * constraint_radius - distances)


def total_cost_batch(extrinsic, cost_fn: CostFn, lidar_batch, prev_distances,
                     distances, constraint_radius) -> np.ndarray:
    extrinsic = np.asarray(extrinsic, dtype=np.float64)
    if cost_fn.kind == "zero":
        return extrinsic.copy() if cost_fn.use_extrinsic else np.zeros_like(extrinsic)
    shaped = shaping_cost_batch(cost_fn, lidar_batch, prev_distances, distances,
                                constraint_radius)
    return extrinsic + shaped if cost_fn.use_extrinsic else shaped


# --- spatial visualization -------------------------------------------------


def heatmap(params: MlpParams, config: WorldConfig, state: WorldState,
            grid_resolution: int, heading: float = 0.0):
    """Evaluate the intrinsic net with the robot placed at each cell of a
    uniform arena grid (fixed heading, sensors recomputed).

    Returns (xs, ys, values) with values[i, j] at (xs[j], ys[i]).
    """
    if grid_resolution < 2:
        raise ValueError("grid_resolution must be at least 2")
    check_intrinsic_arch(params)
    half = config.arena_half_extent
    xs = np.linspace(-half, half, grid_resolution)
    ys = np.linspace(-half, half, grid_resolution)
    lidar_rows = np.empty((grid_resolution * grid_resolution, config.lidar_bins))
    k = 0
    for yv in ys:
        for xv in xs:
            lidar_rows[k] = lidar_from_pose(
                xv, yv, heading, state.obstacle_positions,
                config.lidar_bins, config.lidar_max_range,
            )
            k += 1
    vals = intrinsic_cost_batch(params, lidar_rows)
    return xs, ys, vals.reshape(grid_resolution, grid_resolution)


def heatmap_rows(xs, ys, values):
    """Flatten a heatmap to (x, y, value) rows for CSV output."""
    rows = []
    for i, yv in enumerate(ys):
        for j, xv in enumerate(xs):
            rows.append([float(xv), float(yv), float(values[i, j])])
    return rows
