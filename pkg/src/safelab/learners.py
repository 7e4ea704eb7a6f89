"""Policy-gradient learners for the constrained navigation tasks.

Three algorithms share one rollout/advantage pipeline:

- "ppo": clipped surrogate ascent on reward advantages only.
- "ppo_lagrangian": a multiplier tracks the cost overshoot and the policy
  ascends a multiplier-weighted mix of reward and cost advantages.
- "cpo": a trust-region step that maximizes the reward surrogate subject
  to a linearized bound on the cost surrogate (see cpo.py).

The cost critic and the cost advantages always refer to the combined
(extrinsic plus shaping) cost; the purely extrinsic episode cost is
tracked separately so violation metrics stay untouched by shaping.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .costs import CostFn, total_cost_batch
from .nets import (
    Adam,
    Architecture,
    GaussianPolicy,
    backward,
    forward,
    init_mlp,
    kl,
    log_prob_given_mean,
    make_policy,
    policy_flat,
    policy_from_flat,
)
from .world import World

log = logging.getLogger(__name__)

ALGOS = ("ppo", "ppo_lagrangian", "cpo")


@dataclass
class TrainConfig:
    steps_per_iteration: int = 4000
    iterations: int = 150
    gamma: float = 0.99
    lam: float = 0.97
    clip_eps: float = 0.2
    target_kl: float = 0.01
    policy_lr: float = 4e-4
    value_lr: float = 1e-3
    cost_limit: float = 0.0
    lambda_init: float = 0.0
    lambda_lr: float = 0.05
    cg_damping: float = 0.1
    cg_iters: int = 10
    backtrack_steps: int = 10
    backtrack_coeff: float = 0.8
    trust_delta: float = 0.01
    hidden_sizes: tuple[int, ...] = (32, 32)
    policy_train_iters: int = 40
    value_train_iters: int = 20

    def __post_init__(self):
        if self.steps_per_iteration <= 0 or self.iterations <= 0:
            raise ValueError("steps_per_iteration and iterations must be positive")
        if not (0.0 < self.gamma <= 1.0) or not (0.0 <= self.lam <= 1.0):
            raise ValueError("gamma must be in (0, 1] and lam in [0, 1]")
        if self.clip_eps <= 0 or self.target_kl <= 0 or self.trust_delta <= 0:
            raise ValueError("clip_eps, target_kl and trust_delta must be positive")
        if self.lambda_init < 0:
            raise ValueError("lambda_init must be non-negative")
        # cost_limit may be any sign; negative limits are a meaningful probe
        self.hidden_sizes = tuple(int(n) for n in self.hidden_sizes)


@dataclass
class TrajectoryBatch:
    """Fixed-horizon episodes stacked along the time axis."""

    obs: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    cost_ex: np.ndarray
    cost_in: np.ndarray
    cost_total: np.ndarray
    logp_old: np.ndarray
    value_pred_r: np.ndarray
    value_pred_c: np.ndarray
    ends: np.ndarray  # bool, True on the last step of each episode
    ep_returns: np.ndarray
    ep_cost_ex: np.ndarray
    ep_cost_total: np.ndarray
    adv_r: np.ndarray | None = None
    ret_r: np.ndarray | None = None
    adv_c: np.ndarray | None = None
    ret_c: np.ndarray | None = None

    def __len__(self):
        return self.obs.shape[0]


@dataclass
class IterationMetrics:
    iteration: int
    avg_ep_ret: float
    avg_ep_cost_ex: float
    avg_ep_cost_total: float
    cost_rate: float
    lam: float
    kl: float

    CSV_FIELDS = ("iter", "avg_ep_ret", "avg_ep_cost_ex", "avg_ep_cost_total",
                  "cost_rate", "lambda", "kl")

    def row(self):
        return [self.iteration, self.avg_ep_ret, self.avg_ep_cost_ex,
                self.avg_ep_cost_total, self.cost_rate, self.lam, self.kl]


# --- rollout collection ----------------------------------------------------


def collect_rollout(policy, env_config, cost_fn: CostFn, n_steps, rng,
                    reward_critic=None, cost_critic=None, env_factory=World,
                    deterministic=False) -> TrajectoryBatch:
    """Run whole episodes until at least n_steps steps are gathered.

    Episode layouts are drawn from `rng`, so a fixed rng state reproduces
    the batch exactly. With deterministic=True the mean action is used
    (evaluation protocol); layouts still come from `rng`.
    """
    env = env_factory(env_config)
    radius = env_config.constraint_radius
    obs_rows, actions, rewards, cost_ex = [], [], [], []
    lidar_rows, d_prev, d_now, logps, ends = [], [], [], [], []
    slices = []
    std = np.exp(policy.log_std)
    log_std_sum = float(policy.log_std.sum())
    logp_const = -0.5 * math.log(2.0 * math.pi) * policy.action_dim - log_std_sum
    # the policy is frozen during collection; unpack it once for fast
    # single-observation evaluation in the step loop
    from .nets import layer_views, _layer_activations, _apply_act

    layers = list(zip(layer_views(policy.mean_net),
                      _layer_activations(policy.mean_net.arch)))

    def mean_forward(x):
        a = x
        for (w, b), act in layers:
            a = _apply_act(w @ a + b, act)
        return a

    while len(obs_rows) < n_steps:
        start = len(obs_rows)
        _, ob = env.reset(int(rng.integers(0, 2 ** 31 - 1)))
        done = False
        while not done:
            vec = ob.vector()
            mean = mean_forward(vec)
            if deterministic:
                action = mean
                logp = logp_const
            else:
                action = mean + std * rng.standard_normal(mean.shape)
                z = (action - mean) / std
                logp = -0.5 * float(z @ z) + logp_const
            _, res = env.step(action)
            obs_rows.append(vec)
            actions.append(action)
            rewards.append(res.reward)
            cost_ex.append(res.extrinsic_cost)
            lidar_rows.append(res.observation.constraint_lidar)
            d_prev.append(res.info["constraint_distance_prev"])
            d_now.append(res.info["constraint_distance"])
            logps.append(logp)
            ends.append(res.done)
            ob = res.observation
            done = res.done
        slices.append((start, len(obs_rows)))

    obs_mat = np.asarray(obs_rows)
    cost_ex_arr = np.asarray(cost_ex)
    cost_total = total_cost_batch(cost_ex_arr, cost_fn, np.asarray(lidar_rows),
                                  d_prev, d_now, radius)
    cost_in = cost_total - cost_ex_arr if cost_fn.use_extrinsic else cost_total.copy()
    n = obs_mat.shape[0]
    v_r = forward(reward_critic, obs_mat)[:, 0] if reward_critic is not None else np.zeros(n)
    v_c = forward(cost_critic, obs_mat)[:, 0] if cost_critic is not None else np.zeros(n)
    rew_arr = np.asarray(rewards)

    ep_returns = np.array([rew_arr[a:b].sum() for a, b in slices])
    ep_cost_ex = np.array([cost_ex_arr[a:b].sum() for a, b in slices])
    ep_cost_total = np.array([cost_total[a:b].sum() for a, b in slices])

    return TrajectoryBatch(
        obs=obs_mat,
        actions=np.asarray(actions),
        rewards=rew_arr,
        cost_ex=cost_ex_arr,
        cost_in=cost_in,
        cost_total=cost_total,
        logp_old=np.asarray(logps),
        value_pred_r=v_r,
        value_pred_c=v_c,
        ends=np.asarray(ends, dtype=bool),
        ep_returns=ep_returns,
        ep_cost_ex=ep_cost_ex,
        ep_cost_total=ep_cost_total,
    )


def append_bootstrap(values, ends, bootstrap=0.0):
    """Interleave a bootstrap value after each episode's last entry."""
    values = np.asarray(values, dtype=np.float64)
    ends = np.asarray(ends, dtype=bool)
    if values.shape != ends.shape:
        raise ValueError("values and ends must align")
    out = []
    start = 0
    for i in np.flatnonzero(ends):
        out.append(values[start:i + 1])
        out.append([bootstrap])
        start = i + 1
    if start != len(values):
        raise ValueError("trailing steps without an episode end flag")
    return np.concatenate(out) if out else values


def gae(rewards, values, ends, gamma, lam):
    """Generalized advantage estimates over stacked episodes.

    `values` carries one extra bootstrap entry per episode end (zero at a
    true fixed-horizon termination). Returns (advantages, returns) where
    returns = advantages + per-step values.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    ends = np.asarray(ends, dtype=bool)
    values = np.asarray(values, dtype=np.float64)
    n_eps = int(ends.sum())
    if len(values) != len(rewards) + n_eps:
        raise ValueError(
            f"expected {len(rewards) + n_eps} values (one bootstrap per episode), "
            f"got {len(values)}"
        )
    adv = np.empty_like(rewards)
    v_step = np.empty_like(rewards)
    start = 0
    v_off = 0
    for i in np.flatnonzero(ends):
        length = i + 1 - start
        v = values[v_off:v_off + length + 1]
        r = rewards[start:i + 1]
        delta = r + gamma * v[1:] - v[:-1]
        acc = 0.0
        for t in range(length - 1, -1, -1):
            acc = delta[t] + gamma * lam * acc
            adv[start + t] = acc
        v_step[start:i + 1] = v[:-1]
        start = i + 1
        v_off += length + 1
    if start != len(rewards):
        raise ValueError("trailing steps without an episode end flag")
    return adv, adv + v_step


def compute_advantages(batch: TrajectoryBatch, config: TrainConfig):
    """Fill reward and cost advantages/returns in place."""
    vals_r = append_bootstrap(batch.value_pred_r, batch.ends)
    vals_c = append_bootstrap(batch.value_pred_c, batch.ends)
    batch.adv_r, batch.ret_r = gae(batch.rewards, vals_r, batch.ends,
                                   config.gamma, config.lam)
    batch.adv_c, batch.ret_c = gae(batch.cost_total, vals_c, batch.ends,
                                   config.gamma, config.lam)
    return batch


def normalized(a) -> np.ndarray:
    """Shift/scale to mean 0, std 1 (std floor guards degenerate batches)."""
    a = np.asarray(a, dtype=np.float64)
    return (a - a.mean()) / (a.std() + 1e-8)


# --- clipped-surrogate ascent ----------------------------------------------


def clipped_objective(ratio, adv, clip_eps):
    """Per-sample pessimistic surrogate min(r*A, clip(r)*A)."""
    ratio = np.asarray(ratio, dtype=np.float64)
    adv = np.asarray(adv, dtype=np.float64)
    return np.minimum(ratio * adv, np.clip(ratio, 1.0 - clip_eps, 1.0 + clip_eps) * adv)


def _surrogate_grad(policy, obs, actions, weights):
    """Gradient (flat, mean-net then log-std) of sum_i weights_i * logp_i."""
    mean = forward(policy.mean_net, obs)
    std = np.exp(policy.log_std)
    z = (actions - mean) / std
    upstream = weights[:, None] * (z / std)
    g_mean, _ = backward(policy.mean_net, obs, upstream)
    g_ls = (weights[:, None] * (z * z - 1.0)).sum(axis=0)
    return np.concatenate([g_mean, g_ls])


def _clipped_ascent(policy, obs, actions, logp_old, advantages, config):
    """Multiple Adam steps on the clipped surrogate, stopping on the KL
    budget. A step that lands beyond twice the target KL is reverted, so
    the returned policy always satisfies kl <= 2 * target_kl."""
    old_mean = forward(policy.mean_net, obs)
    n = len(logp_old)
    flat = policy_flat(policy)
    opt = Adam(flat.size, config.policy_lr)
    current = policy
    achieved = 0.0
    eps = config.clip_eps
    for _ in range(config.policy_train_iters):
        mean = forward(current.mean_net, obs)
        logp = log_prob_given_mean(current, mean, actions)
        ratio = np.exp(logp - logp_old)
        unclipped = ratio * advantages
        clipped = np.clip(ratio, 1.0 - eps, 1.0 + eps) * advantages
        active = (unclipped <= clipped) | (np.abs(ratio - 1.0) <= eps)
        weights = np.where(active, ratio * advantages, 0.0) / n
        grad = _surrogate_grad_given(current, obs, actions, mean, weights)
        if not np.all(np.isfinite(grad)):
            log.warning("non-finite policy gradient, aborting the update")
            break
        new_flat = opt.step(flat, -grad)
        candidate = policy_from_flat(policy, new_flat)
        kl_val = kl_from_cached(old_mean, policy, candidate, obs)
        if not math.isfinite(kl_val):
            log.warning("non-finite KL during policy update, aborting")
            break
        if kl_val > 2.0 * config.target_kl:
            break  # revert this step, keep the previous policy
        current = candidate
        flat = policy_flat(current)
        achieved = kl_val
        if kl_val > config.target_kl:
            break
    return current, achieved


def _surrogate_grad_given(policy, obs, actions, mean, weights):
    std = np.exp(policy.log_std)
    z = (actions - mean) / std
    upstream = weights[:, None] * (z / std)
    g_mean, _ = backward(policy.mean_net, obs, upstream)
    g_ls = (weights[:, None] * (z * z - 1.0)).sum(axis=0)
    return np.concatenate([g_mean, g_ls])


def kl_from_cached(mean_a, policy_a, policy_b, obs):
    from .nets import kl_terms_given_mean

    mean_b = forward(policy_b.mean_net, obs)
    per = kl_terms_given_mean(mean_a, policy_a.log_std, policy_b, mean_b)
    return float(np.mean(per))


def ppo_update(policy, batch: TrajectoryBatch, config: TrainConfig):
    """Clipped-surrogate ascent on normalized reward advantages.

    Returns (new_policy, achieved_kl).
    """
    adv = normalized(batch.adv_r)
    return _clipped_ascent(policy, batch.obs, batch.actions, batch.logp_old, adv, config)


def lagrange_step(lam, lambda_lr, episode_cost, cost_limit):
    """Projected dual ascent on the multiplier; never negative."""
    return max(0.0, lam + lambda_lr * (episode_cost - cost_limit))


def lagrangian_update(policy, lam, batch: TrajectoryBatch, config: TrainConfig):
    """Multiplier update followed by a clipped step on the mixed advantage.

    Returns (new_policy, new_lam, achieved_kl).
    """
    j_c = float(np.mean(batch.ep_cost_total))
    new_lam = lagrange_step(lam, config.lambda_lr, j_c, config.cost_limit)
    adv_r = normalized(batch.adv_r)
    adv_c = normalized(batch.adv_c)
    combined = (adv_r - new_lam * adv_c) / (1.0 + new_lam)
    new_policy, achieved = _clipped_ascent(
        policy, batch.obs, batch.actions, batch.logp_old, combined, config
    )
    return new_policy, new_lam, achieved


def value_update(critic, obs, targets, config: TrainConfig, train_iters=None):
    """Full-batch Adam on mean squared error; returns the new critic."""
    obs = np.asarray(obs, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    n = len(targets)
    iters = config.value_train_iters if train_iters is None else train_iters
    values = critic.values
    opt = Adam(values.size, config.value_lr)
    arch = critic.arch
    current = critic
    for _ in range(iters):
        pred = forward(current, obs)[:, 0]
        upstream = (2.0 / n) * (pred - targets)[:, None]
        grad, _ = backward(current, obs, upstream)
        if not np.all(np.isfinite(grad)):
            log.warning("non-finite critic gradient, aborting the update")
            break
        values = opt.step(current.values, grad)
        from .nets import MlpParams

        current = MlpParams(arch, values)
    return current


# --- evaluation and the main loop ------------------------------------------


def evaluate_policy(policy, env_config, cost_fn: CostFn, episodes, rng,
                    env_factory=World, deterministic=True):
    """Fresh-layout rollouts with the final policy; returns per-episode sums.

    Evaluation uses the mean action by default so the numbers describe the
    learned behavior rather than the exploration noise.
    """
    batch = collect_rollout(policy, env_config, cost_fn,
                            episodes * env_config.horizon, rng,
                            env_factory=env_factory, deterministic=deterministic)
    return {
        "ep_returns": batch.ep_returns[:episodes],
        "ep_cost_ex": batch.ep_cost_ex[:episodes],
        "ep_cost_total": batch.ep_cost_total[:episodes],
    }


def train(algo, env_config, cost_fn: CostFn, config: TrainConfig, seed,
          env_factory=World, on_iteration=None):
    """Run one learner; returns (policy, list of IterationMetrics).

    All randomness derives from `seed`: network inits, episode layouts and
    action noise. Identical arguments give identical metrics bit for bit.
    """
    if algo not in ALGOS:
        raise ValueError(f"algo must be one of {ALGOS}, got {algo!r}")
    ss = np.random.SeedSequence(int(seed))
    init_ss, rollout_ss = ss.spawn(2)
    init_rng = np.random.default_rng(init_ss)
    rollout_rng = np.random.default_rng(rollout_ss)

    obs_dim = env_config.obs_dim
    policy = make_policy(obs_dim, 2, config.hidden_sizes, init_rng)
    critic_arch = Architecture((obs_dim, *config.hidden_sizes, 1))
    reward_critic = init_mlp(critic_arch, init_rng)
    cost_critic = init_mlp(critic_arch, init_rng)
    lam = config.lambda_init

    from .cpo import cpo_update

    metrics = []
    for it in range(config.iterations):
        batch = collect_rollout(policy, env_config, cost_fn,
                                config.steps_per_iteration, rollout_rng,
                                reward_critic, cost_critic, env_factory)
        compute_advantages(batch, config)
        if algo == "ppo":
            policy, kl_val = ppo_update(policy, batch, config)
        elif algo == "ppo_lagrangian":
            policy, lam, kl_val = lagrangian_update(policy, lam, batch, config)
        else:
            policy, diag = cpo_update(policy, batch, config)
            kl_val = diag["kl"]
        reward_critic = value_update(reward_critic, batch.obs, batch.ret_r, config)
        if algo != "ppo":
            cost_critic = value_update(cost_critic, batch.obs, batch.ret_c, config)
        m = IterationMetrics(
            iteration=it,
            avg_ep_ret=float(np.mean(batch.ep_returns)),
            avg_ep_cost_ex=float(np.mean(batch.ep_cost_ex)),
            avg_ep_cost_total=float(np.mean(batch.ep_cost_total)),
            cost_rate=float(np.mean(batch.cost_ex > 0.0)),
            lam=lam if algo == "ppo_lagrangian" else 0.0,
            kl=kl_val,
        )
        metrics.append(m)
        if on_iteration is not None:
            on_iteration(m)
    return policy, metrics
