"""2D navigation world: goal-reaching or box-pushing tasks with hazard or
pillar constraints and a point or differential-drive robot.

Geometry is planar and kinematic. Hazards are non-physical circular
regions that charge a cost growing with penetration depth; pillars are
solid discs that charge a unit cost on contact and push the robot back
out. Episodes run to a fixed horizon with no early termination; reaching
the goal resamples the goal and the episode continues.

The robot senses the world through coarse radial proximity readings: the
circle around the robot heading is split into equal angular sectors and
each sector reports max(0, 1 - distance / max_range) for the nearest
relevant object, so readings grow as objects get closer.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

TASKS = ("goal", "push")
CONSTRAINTS = ("hazard", "pillar")
ROBOTS = ("point", "car")

_TWO_PI = 2.0 * math.pi


class LayoutError(RuntimeError):
    """Entity placement could not satisfy the clearance rules."""


def wrap_angle(a: float) -> float:
    """Map an angle to [-pi, pi)."""
    return (a + math.pi) % _TWO_PI - math.pi


@dataclass
class WorldConfig:
    task: str = "goal"
    constraint: str = "hazard"
    robot: str = "point"
    n_obstacles: int = 4
    goal_radius: float = 0.3
    hazard_radius: float = 0.2
    pillar_radius: float = 0.2
    box_radius: float = 0.2
    robot_radius: float = 0.1
    arena_half_extent: float = 2.0
    horizon: int = 400
    dt: float = 0.1
    max_speed: float = 1.0
    max_turn_rate: float = math.pi
    car_axle: float = 0.4
    lidar_bins: int = 8
    lidar_max_range: float = 3.0
    layout_seed: int = 0
    placement_clearance: float = 0.1
    placement_attempts: int = 200
    placement_restarts: int = 20

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"task must be one of {TASKS}, got {self.task!r}")
        if self.constraint not in CONSTRAINTS:
            raise ValueError(f"constraint must be one of {CONSTRAINTS}, got {self.constraint!r}")
        if self.robot not in ROBOTS:
            raise ValueError(f"robot must be one of {ROBOTS}, got {self.robot!r}")
        for name in ("goal_radius", "hazard_radius", "pillar_radius", "box_radius",
                     "robot_radius", "arena_half_extent", "dt", "max_speed",
                     "max_turn_rate", "car_axle", "lidar_max_range"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.horizon <= 0:
            raise ValueError("horizon must be positive")
        if self.lidar_bins < 1:
            raise ValueError("lidar_bins must be at least 1")
        if self.n_obstacles < 0:
            raise ValueError("n_obstacles must be non-negative")

    @property
    def constraint_radius(self) -> float:
        return self.hazard_radius if self.constraint == "hazard" else self.pillar_radius

    @property
    def obs_dim(self) -> int:
        n = 5 + 2 * self.lidar_bins
        if self.task == "push":
            n += self.lidar_bins
        return n


@dataclass
class RobotState:
    position: tuple[float, float]
    heading: float
    linear_velocity: tuple[float, float] = (0.0, 0.0)
    angular_velocity: float = 0.0


@dataclass
class WorldState:
    robot: RobotState
    goal_position: tuple[float, float]
    box_position: tuple[float, float] | None
    obstacle_positions: list[tuple[float, float]]
    step_index: int = 0
    # distances cached from the end of the previous step, consumed by the
    # potential-shaped rewards and the shaping costs
    prev_goal_distance: float = 0.0
    prev_box_distances: tuple[float, float] | None = None  # (robot-goal, box-goal)
    prev_constraint_distance: float = math.inf


@dataclass
class Observation:
    proprio: np.ndarray          # vx_body, vy_body, omega, cos(heading), sin(heading)
    goal_lidar: np.ndarray
    constraint_lidar: np.ndarray
    box_lidar: np.ndarray | None = None
    _vector: np.ndarray | None = None

    def vector(self) -> np.ndarray:
        return self._vector


@dataclass
class StepResult:
    observation: Observation
    reward: float
    extrinsic_cost: float
    violation: bool
    done: bool
    info: dict = field(default_factory=dict)


# --- pure scoring and sensing ops ------------------------------------------


def hazard_cost(state: WorldState, hazard_radius: float) -> float:
    """max(0, R - d) where d is the robot-center distance to the nearest
    hazard center. Zero when no hazard is within R."""
    rx, ry = state.robot.position
    nearest = math.inf
    for hx, hy in state.obstacle_positions:
        d = math.hypot(hx - rx, hy - ry)
        if d < nearest:
            nearest = d
    return max(0.0, hazard_radius - nearest)


def pillar_cost(state: WorldState, robot_radius: float, pillar_radius: float) -> float:
    """1.0 on strict disc overlap with any pillar, else 0.0."""
    rx, ry = state.robot.position
    rsum = robot_radius + pillar_radius
    for px, py in state.obstacle_positions:
        if math.hypot(px - rx, py - ry) < rsum:
            return 1.0
    return 0.0


def goal_reward(prev_distance: float, distance: float, goal_radius: float) -> float:
    """Potential-shaped approach reward plus an achievement bonus."""
    r = prev_distance - distance
    if distance < goal_radius:
        r += 1.0
    return r


def push_reward(state: WorldState, next_state: WorldState, goal_radius: float) -> float:
    """Approach terms for both robot-to-goal and box-to-goal, plus a bonus
    when the box reaches the goal. Both states must refer to the same goal."""
    gx, gy = state.goal_position
    rx0, ry0 = state.robot.position
    bx0, by0 = state.box_position
    rx1, ry1 = next_state.robot.position
    bx1, by1 = next_state.box_position
    d_r_prev = math.hypot(gx - rx0, gy - ry0)
    d_b_prev = math.hypot(gx - bx0, gy - by0)
    d_r = math.hypot(gx - rx1, gy - ry1)
    d_b = math.hypot(gx - bx1, gy - by1)
    r = (d_r_prev - d_r) + (d_b_prev - d_b)
    if d_b < goal_radius:
        r += 1.0
    return r


def lidar_from_pose(x, y, heading, targets, bins, max_range):
    """Sector-max proximity readings around a pose. Sector i covers
    heading-relative angles [2*pi*i/bins, 2*pi*(i+1)/bins)."""
    vals = [0.0] * bins
    for tx, ty in targets:
        dx = tx - x
        dy = ty - y
        dist = math.hypot(dx, dy)
        if dist >= max_range:
            continue
        ang = (math.atan2(dy, dx) - heading) % _TWO_PI
        idx = int(ang / _TWO_PI * bins)
        if idx >= bins:  # float edge at exactly 2*pi
            idx = bins - 1
        v = 1.0 - dist / max_range
        if v > vals[idx]:
            vals[idx] = v
    return vals


def pseudo_lidar(state: WorldState, targets, bins, max_range) -> np.ndarray:
    x, y = state.robot.position
    return np.array(lidar_from_pose(x, y, state.robot.heading, targets, bins, max_range))


def _project_disc(x, y, radius, centers, center_radius):
    """Push a disc out of any overlapping fixed disc, along the center line."""
    rsum = radius + center_radius
    for cx, cy in centers:
        dx = x - cx
        dy = y - cy
        d = math.hypot(dx, dy)
        if d < rsum:
            if d > 1e-12:
                x = cx + dx / d * rsum
                y = cy + dy / d * rsum
            else:
                x = cx + rsum
    return x, y


# --- the stateful episode runner -------------------------------------------


class World:
    """Owns a WorldState and an RNG; wires the pure ops into reset/step."""

    def __init__(self, config: WorldConfig):
        self.config = config
        self._state: WorldState | None = None
        self._rng = None
        self._done = True

    @property
    def state(self) -> WorldState:
        return self._state

    # placement ------------------------------------------------------------

    def _entity_specs(self):
        """(kind, clearance radius, wall bound) per entity, in placement order."""
        cfg = self.config
        half = cfg.arena_half_extent
        if cfg.constraint == "hazard":
            obs_bound = half - cfg.hazard_radius
        else:
            # pillars keep extra wall margin so the contact projection can
            # never push the robot (or box) outside the arena
            body = cfg.robot_radius
            if cfg.task == "push":
                body = max(body, cfg.box_radius)
            obs_bound = half - cfg.pillar_radius - 2.0 * body - cfg.placement_clearance
            if obs_bound <= 0:
                raise LayoutError("arena too small for pillars with wall margin")
        specs = [("obstacle", cfg.constraint_radius, obs_bound)] * cfg.n_obstacles
        specs.append(("goal", cfg.goal_radius, half - cfg.goal_radius))
        if cfg.task == "push":
            specs.append(("box", cfg.box_radius, half - cfg.box_radius))
        specs.append(("robot", cfg.robot_radius, half - cfg.robot_radius))
        return specs

    def _sample_layout(self):
        cfg = self.config
        rng = self._rng
        placed = []  # (kind, radius, x, y)
        for kind, radius, bound in self._entity_specs():
            if bound <= 0:
                raise LayoutError(f"arena too small to place {kind}")
            for _ in range(cfg.placement_attempts):
                x = rng.uniform(-bound, bound)
                y = rng.uniform(-bound, bound)
                ok = True
                for _, r2, x2, y2 in placed:
                    if math.hypot(x - x2, y - y2) < radius + r2 + cfg.placement_clearance:
                        ok = False
                        break
                if ok:
                    placed.append((kind, radius, x, y))
                    break
            else:
                raise LayoutError(f"could not place {kind} after {cfg.placement_attempts} attempts")
        return placed

    def _resample_goal(self):
        cfg = self.config
        s = self._state
        bound = cfg.arena_half_extent - cfg.goal_radius
        others = [(cfg.constraint_radius, p) for p in s.obstacle_positions]
        others.append((cfg.robot_radius, s.robot.position))
        if s.box_position is not None:
            others.append((cfg.box_radius, s.box_position))
        for _ in range(cfg.placement_attempts):
            x = self._rng.uniform(-bound, bound)
            y = self._rng.uniform(-bound, bound)
            ok = True
            for r2, (x2, y2) in others:
                if math.hypot(x - x2, y - y2) < cfg.goal_radius + r2 + cfg.placement_clearance:
                    ok = False
                    break
            if ok:
                return (x, y)
        raise LayoutError("could not resample the goal")

    # episode API ----------------------------------------------------------

    def reset(self, seed: int | None = None):
        """Start a fresh episode. Same seed, same layout, bit for bit."""
        cfg = self.config
        if seed is None:
            seed = cfg.layout_seed
        self._rng = np.random.default_rng(int(seed))
        placed = None
        err = None
        for _ in range(cfg.placement_restarts):
            try:
                placed = self._sample_layout()
                break
            except LayoutError as exc:
                err = exc
        if placed is None:
            raise LayoutError(f"layout infeasible for this config: {err}")

        obstacles = [(x, y) for kind, _, x, y in placed if kind == "obstacle"]
        goal = next((x, y) for kind, _, x, y in placed if kind == "goal")
        box = next(((x, y) for kind, _, x, y in placed if kind == "box"), None)
        robot_pos = next((x, y) for kind, _, x, y in placed if kind == "robot")
        heading = self._rng.uniform(-math.pi, math.pi)

        robot = RobotState(robot_pos, heading)
        state = WorldState(robot, goal, box, obstacles)
        state.prev_goal_distance = math.hypot(goal[0] - robot_pos[0], goal[1] - robot_pos[1])
        if box is not None:
            state.prev_box_distances = (
                state.prev_goal_distance,
                math.hypot(goal[0] - box[0], goal[1] - box[1]),
            )
        state.prev_constraint_distance = self._constraint_distance(robot_pos, obstacles)
        self._state = state
        self._done = False
        return state, self.observe()

    def start_from(self, state: WorldState, seed: int | None = None):
        """Adopt a prepared step-0 state (e.g. from load_layout) and begin
        an episode; `seed` drives any later goal resampling."""
        if seed is None:
            seed = self.config.layout_seed
        self._rng = np.random.default_rng(int(seed))
        self._state = state
        self._done = False
        return state, self.observe()

    def _constraint_distance(self, position, obstacles):
        """Distance to the nearest obstacle: center distance for hazards,
        surface distance for pillars."""
        cfg = self.config
        x, y = position
        nearest = math.inf
        for ox, oy in obstacles:
            d = math.hypot(ox - x, oy - y)
            if d < nearest:
                nearest = d
        if cfg.constraint == "pillar" and nearest < math.inf:
            nearest -= cfg.pillar_radius
        return nearest

    def step(self, action):
        if self._done:
            raise RuntimeError("step() on a finished episode; call reset() first")
        cfg = self.config
        s = self._state
        a0 = min(1.0, max(-1.0, float(action[0])))
        a1 = min(1.0, max(-1.0, float(action[1])))

        x, y = s.robot.position
        th_old = s.robot.heading
        if cfg.robot == "point":
            th = wrap_angle(th_old + cfg.max_turn_rate * a0 * cfg.dt)
            speed = cfg.max_speed * a1
            nx = x + speed * math.cos(th) * cfg.dt
            ny = y + speed * math.sin(th) * cfg.dt
        else:
            v_l = cfg.max_speed * a0
            v_r = cfg.max_speed * a1
            v = 0.5 * (v_l + v_r)
            omega = (v_r - v_l) / cfg.car_axle
            th = wrap_angle(th_old + omega * cfg.dt)
            nx = x + v * math.cos(th) * cfg.dt
            ny = y + v * math.sin(th) * cfg.dt

        bound = cfg.arena_half_extent - cfg.robot_radius
        nx = min(bound, max(-bound, nx))
        ny = min(bound, max(-bound, ny))

        if cfg.task == "push":
            bx, by = s.box_position
            d = math.hypot(nx - bx, ny - by)
            rsum = cfg.robot_radius + cfg.box_radius
            if d < rsum:
                if d > 1e-12:
                    ux, uy = (bx - nx) / d, (by - ny) / d
                else:
                    ux, uy = 1.0, 0.0
                depth = rsum - d
                bx += ux * depth
                by += uy * depth
                bbound = cfg.arena_half_extent - cfg.box_radius
                bx = min(bbound, max(-bbound, bx))
                by = min(bbound, max(-bbound, by))
                if cfg.constraint == "pillar":
                    bx, by = _project_disc(
                        bx, by, cfg.box_radius, s.obstacle_positions, cfg.pillar_radius
                    )
                s.box_position = (bx, by)

        s.robot = RobotState(
            (nx, ny), th, s.robot.linear_velocity, s.robot.angular_velocity
        )
        if cfg.constraint == "hazard":
            cost_ex = hazard_cost(s, cfg.hazard_radius)
        else:
            cost_ex = pillar_cost(s, cfg.robot_radius, cfg.pillar_radius)
            if cost_ex > 0.0:
                nx, ny = _project_disc(
                    nx, ny, cfg.robot_radius, s.obstacle_positions, cfg.pillar_radius
                )
        s.robot = RobotState(
            (nx, ny),
            th,
            ((nx - x) / cfg.dt, (ny - y) / cfg.dt),
            wrap_angle(th - th_old) / cfg.dt,
        )

        gx, gy = s.goal_position
        d_g = math.hypot(gx - nx, gy - ny)
        achieved = False
        if cfg.task == "goal":
            reward = goal_reward(s.prev_goal_distance, d_g, cfg.goal_radius)
            achieved = d_g < cfg.goal_radius
            d_b = None
        else:
            bx, by = s.box_position
            d_b = math.hypot(gx - bx, gy - by)
            pr, pb = s.prev_box_distances
            reward = (pr - d_g) + (pb - d_b)
            achieved = d_b < cfg.goal_radius
            if achieved:
                reward += 1.0

        d_c_prev = s.prev_constraint_distance
        d_c = self._constraint_distance((nx, ny), s.obstacle_positions)

        if achieved:
            s.goal_position = self._resample_goal()
            gx, gy = s.goal_position
            d_g = math.hypot(gx - nx, gy - ny)
            if d_b is not None:
                bx, by = s.box_position
                d_b = math.hypot(gx - bx, gy - by)

        s.prev_goal_distance = d_g
        if cfg.task == "push":
            s.prev_box_distances = (d_g, d_b)
        s.prev_constraint_distance = d_c
        s.step_index += 1
        done = s.step_index >= cfg.horizon
        self._done = done

        info = {
            "goal_distance": d_g,
            "constraint_distance": d_c,
            "constraint_distance_prev": d_c_prev,
            "goal_achieved": achieved,
        }
        if cfg.task == "push":
            info["box_goal_distance"] = d_b
        return s, StepResult(self.observe(), reward, cost_ex, cost_ex > 0.0, done, info)

    def observe(self) -> Observation:
        cfg = self.config
        s = self._state
        x, y = s.robot.position
        th = s.robot.heading
        vx, vy = s.robot.linear_velocity
        c, sn = math.cos(th), math.sin(th)
        proprio = [c * vx + sn * vy, -sn * vx + c * vy, s.robot.angular_velocity, c, sn]
        goal = lidar_from_pose(x, y, th, [s.goal_position], cfg.lidar_bins, cfg.lidar_max_range)
        constr = lidar_from_pose(x, y, th, s.obstacle_positions, cfg.lidar_bins, cfg.lidar_max_range)
        parts = proprio + goal + constr
        box = None
        if cfg.task == "push":
            box = lidar_from_pose(x, y, th, [s.box_position], cfg.lidar_bins, cfg.lidar_max_range)
            parts = parts + box
        vec = np.array(parts)
        nb = cfg.lidar_bins
        return Observation(
            proprio=vec[0:5],
            goal_lidar=vec[5:5 + nb],
            constraint_lidar=vec[5 + nb:5 + 2 * nb],
            box_lidar=vec[5 + 2 * nb:] if box is not None else None,
            _vector=vec,
        )


# --- layout persistence and rendering --------------------------------------


def layout_to_dict(state: WorldState, seed: int | None = None) -> dict:
    d = {
        "robot": {"position": list(state.robot.position), "heading": state.robot.heading},
        "goal_position": list(state.goal_position),
        "obstacle_positions": [list(p) for p in state.obstacle_positions],
    }
    if state.box_position is not None:
        d["box_position"] = list(state.box_position)
    if seed is not None:
        d["seed"] = int(seed)
    return d


def save_layout(path, state: WorldState, seed: int | None = None):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(layout_to_dict(state, seed), fh, indent=2, sort_keys=True)


def state_from_layout(config: WorldConfig, layout: dict) -> WorldState:
    """Rebuild a step-0 WorldState from a layout dict; caches recomputed."""
    robot = RobotState(tuple(layout["robot"]["position"]), float(layout["robot"]["heading"]))
    goal = tuple(layout["goal_position"])
    box = tuple(layout["box_position"]) if "box_position" in layout else None
    obstacles = [tuple(p) for p in layout["obstacle_positions"]]
    state = WorldState(robot, goal, box, obstacles)
    rx, ry = robot.position
    state.prev_goal_distance = math.hypot(goal[0] - rx, goal[1] - ry)
    if box is not None:
        state.prev_box_distances = (
            state.prev_goal_distance,
            math.hypot(goal[0] - box[0], goal[1] - box[1]),
        )
    nearest = math.inf
    for ox, oy in obstacles:
        nearest = min(nearest, math.hypot(ox - rx, oy - ry))
    if config.constraint == "pillar" and nearest < math.inf:
        nearest -= config.pillar_radius
    state.prev_constraint_distance = nearest
    return state


def load_layout(config: WorldConfig, path) -> WorldState:
    with open(path, "r", encoding="utf-8") as fh:
        return state_from_layout(config, json.load(fh))


def render_header(config: WorldConfig) -> list[str]:
    cols = ["step", "robot_x", "robot_y", "robot_heading", "goal_x", "goal_y"]
    if config.task == "push":
        cols += ["box_x", "box_y"]
    for i in range(config.n_obstacles):
        cols += [f"obs{i}_x", f"obs{i}_y"]
    return cols


def render_row(state: WorldState) -> list[float]:
    """One CSV row of entity positions; pairs with render_header()."""
    row = [
        float(state.step_index),
        state.robot.position[0],
        state.robot.position[1],
        state.robot.heading,
        state.goal_position[0],
        state.goal_position[1],
    ]
    if state.box_position is not None:
        row += [state.box_position[0], state.box_position[1]]
    for ox, oy in state.obstacle_positions:
        row += [ox, oy]
    return row
