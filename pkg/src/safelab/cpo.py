"""Constrained trust-region policy step.

Builds the local model at the current policy: reward surrogate gradient g,
cost surrogate gradient b, constraint slack c, and a curvature operator H
from the mean-KL second-order form. Solves

    max g.x   s.t.  b.x + c <= 0,   0.5 x.H.x <= delta

through its two-multiplier dual in the scalars q = g.Hinv.g,
r = g.Hinv.b, s = b.Hinv.b, then backtracks along the step until the
measured KL fits the trust region and the cost surrogate does not grow
past the allowed slack. When no direction inside the trust region can
satisfy the cost bound, a recovery step descends the cost surrogate alone.
"""

from __future__ import annotations

import logging
import math

import numpy as np

from .nets import backward, forward, jvp_params, kl, log_prob_given_mean, policy_flat, policy_from_flat
from .learners import TrainConfig, TrajectoryBatch, normalized, _surrogate_grad

log = logging.getLogger(__name__)

_EPS = 1e-12
_B_NOISE_FLOOR = 1e-6


def fisher_vector_product(policy, obs, v, damping):
    """H v for the mean-KL curvature at the current policy, plus damping.

    The mean-net block is the Gauss-Newton form J^T diag(1/var) J averaged
    over the batch; the state-independent log-std block contributes a
    constant 2 per dimension. Exact at the expansion point, where the KL
    gradient vanishes.
    """
    v = np.asarray(v, dtype=np.float64)
    n_w = policy.mean_net.values.size
    v_w, v_ls = v[:n_w], v[n_w:]
    obs = np.asarray(obs, dtype=np.float64)
    n = obs.shape[0]
    tangent = jvp_params(policy.mean_net, obs, v_w)
    inv_var = np.exp(-2.0 * policy.log_std)
    h_w, _ = backward(policy.mean_net, obs, tangent * inv_var / n)
    h_ls = 2.0 * v_ls
    return np.concatenate([h_w, h_ls]) + damping * v


def conjugate_gradient(mvp, rhs, iters, tol=1e-10):
    """Solve H x = rhs with plain CG. Returns (x, converged)."""
    x = np.zeros_like(rhs)
    r = rhs.copy()
    p = rhs.copy()
    rs = float(r @ r)
    rs0 = rs
    if rs < tol:
        return x, True
    for _ in range(iters):
        hp = mvp(p)
        denom = float(p @ hp)
        if not math.isfinite(denom) or denom <= 0.0:
            return x, False
        alpha = rs / denom
        x = x + alpha * p
        r = r - alpha * hp
        rs_new = float(r @ r)
        if not math.isfinite(rs_new):
            return x, False
        if rs_new < tol:
            return x, True
        p = r + (rs_new / rs) * p
        rs = rs_new
    # partial solve is fine as long as the residual actually shrank
    return x, rs <= rs0


def solve_trust_region_subproblem(q, r, s, c, delta):
    """Dual of the two-constraint local problem, in closed form.

    Returns a dict with `case` one of:
      "infeasible"  no point in the trust region satisfies the cost bound
      "inactive"    every point satisfies it, plain trust-region ascent
      "active"      the cost bound binds; multipliers lam (trust region)
                    and nu (cost) define the step (g - nu b) scaled by 1/lam
    """
    if s <= _EPS:
        raise ValueError("s must be positive; handle a vanishing cost gradient upstream")
    gap = c * c / s - 2.0 * delta
    if c > 0.0 and gap > 0.0:
        return {"case": "infeasible", "lam": 0.0, "nu": 0.0}
    if c < 0.0 and gap > 0.0:
        lam = math.sqrt(q / (2.0 * delta)) if q > 0.0 else _EPS
        return {"case": "inactive", "lam": max(lam, _EPS), "nu": 0.0}

    # both constraints can interact; two dual branches split by sign(nu)
    a_coef = max(q - r * r / s, 0.0)  # g component orthogonal to b, in H metric
    b_coef = 2.0 * delta - c * c / s  # >= 0 here

    def dual_value(lam, nu):
        return (q - 2.0 * nu * r + nu * nu * s) / (2.0 * lam) - nu * c + lam * delta

    # branch with nu > 0: nu(lam) = (r + lam c)/s, valid where positive
    if c < 0.0:
        lo_a, hi_a = 0.0, (r / -c if r > 0.0 else 0.0)
    elif c > 0.0:
        lo_a, hi_a = max(0.0, -r / c), math.inf
    else:
        lo_a, hi_a = (0.0, math.inf) if r > 0.0 else (0.0, 0.0)

    def project(lam, lo, hi):
        lam = max(lam, lo, _EPS)
        if hi < math.inf:
            lam = min(lam, max(hi, _EPS))
        return lam

    best = None
    if hi_a > lo_a:
        lam_a = math.sqrt(a_coef / b_coef) if b_coef > _EPS else lo_a
        lam_a = project(lam_a, lo_a, hi_a)
        nu_a = max(0.0, (r + lam_a * c) / s)
        best = (dual_value(lam_a, nu_a), lam_a, nu_a)

    # branch with nu = 0: pure trust-region scaling, valid on the complement
    if c < 0.0:
        lo_b, hi_b = (r / -c if r > 0.0 else 0.0), math.inf
    elif c > 0.0:
        lo_b, hi_b = 0.0, max(0.0, -r / c)
    else:
        lo_b, hi_b = (0.0, math.inf) if r <= 0.0 else (0.0, 0.0)

    if hi_b > lo_b:
        lam_b = math.sqrt(q / (2.0 * delta)) if q > 0.0 else _EPS
        lam_b = project(lam_b, lo_b, hi_b)
        cand = (dual_value(lam_b, 0.0), lam_b, 0.0)
        if best is None or cand[0] < best[0]:
            best = cand

    if best is None:  # degenerate; fall back to the trust-region scaling
        lam_b = max(math.sqrt(q / (2.0 * delta)) if q > 0.0 else _EPS, _EPS)
        best = (dual_value(lam_b, 0.0), lam_b, 0.0)

    _, lam, nu = best
    return {"case": "active", "lam": lam, "nu": nu}


def cpo_update(policy, batch: TrajectoryBatch, config: TrainConfig):
    """One constrained trust-region step. Returns (new_policy, diagnostics)."""
    obs = batch.obs
    actions = batch.actions
    logp_old = batch.logp_old
    n = len(logp_old)
    adv_r = normalized(batch.adv_r)
    adv_c = batch.adv_c  # raw scale: its units carry the constraint meaning

    g = _surrogate_grad(policy, obs, actions, adv_r / n)
    b = _surrogate_grad(policy, obs, actions, adv_c / n)
    j_c = float(np.mean(batch.ep_cost_total))
    # linearized constraint slack in per-step discounted units
    c = (j_c - config.cost_limit) * (1.0 - config.gamma)

    def mvp(v):
        return fisher_vector_product(policy, obs, v, config.cg_damping)

    diagnostics = {"j_c": j_c, "c": c, "cg_warning": False, "accepted": False,
                   "kl": 0.0, "backtracks": None}

    v_g, ok_g = conjugate_gradient(mvp, g, config.cg_iters)
    delta = config.trust_delta
    b_norm = float(np.sqrt(b @ b))

    if not ok_g or not np.all(np.isfinite(v_g)):
        log.warning("conjugate gradient failed to make progress, using the plain gradient")
        diagnostics["cg_warning"] = True
        gg = float(g @ g)
        if gg <= _EPS:
            return policy, diagnostics
        x = math.sqrt(2.0 * delta / gg) * g
        diagnostics["case"] = "cg_fallback"
    elif b_norm <= _B_NOISE_FLOOR:
        # no usable cost gradient: unconstrained natural-gradient ascent.
        # Below this norm the direction is conjugate-gradient and value-fit
        # noise, and a recovery step along it would just random-walk the
        # policy at full trust-region size.
        q = float(g @ v_g)
        if q <= _EPS:
            return policy, diagnostics
        x = math.sqrt(2.0 * delta / q) * v_g
        diagnostics["case"] = "unconstrained"
    else:
        v_b, ok_b = conjugate_gradient(mvp, b, config.cg_iters)
        if not ok_b or not np.all(np.isfinite(v_b)):
            log.warning("conjugate gradient failed on the cost direction, using the plain gradient")
            diagnostics["cg_warning"] = True
            gg = float(g @ g)
            if gg <= _EPS:
                return policy, diagnostics
            x = math.sqrt(2.0 * delta / gg) * g
            diagnostics["case"] = "cg_fallback"
        else:
            q = float(g @ v_g)
            r = float(g @ v_b)
            s = float(b @ v_b)
            sol = solve_trust_region_subproblem(q, r, s, c, delta)
            diagnostics.update({"q": q, "r": r, "s": s, "case": sol["case"],
                                "lam_dual": sol["lam"], "nu": sol["nu"]})
            if sol["case"] == "infeasible":
                x = -math.sqrt(2.0 * delta / s) * v_b
            else:
                x = (v_g - sol["nu"] * v_b) / max(sol["lam"], _EPS)

    recovery = diagnostics.get("case") == "infeasible"
    flat_old = policy_flat(policy)
    surr_cost_old = float(np.mean(adv_c))  # ratio = 1 at the current policy
    allowed_rise = max(-c, 0.0)

    accepted = policy
    for j in range(config.backtrack_steps):
        step = config.backtrack_coeff ** j
        candidate = policy_from_flat(policy, flat_old + step * x)
        kl_val = kl(policy, candidate, obs)
        if not math.isfinite(kl_val) or kl_val > delta:
            continue
        logp_new = log_prob_given_mean(
            candidate, forward(candidate.mean_net, obs), actions
        )
        ratio = np.exp(logp_new - logp_old)
        surr_cost_new = float(np.mean(ratio * adv_c))
        cost_ok = (surr_cost_new - surr_cost_old) <= allowed_rise
        if recovery:
            # recovery only needs to head back toward feasibility
            cost_ok = surr_cost_new <= surr_cost_old
        if cost_ok:
            accepted = candidate
            diagnostics.update({"accepted": True, "kl": kl_val, "backtracks": j,
                                "surr_cost_change": surr_cost_new - surr_cost_old})
            break
    if not diagnostics["accepted"]:
        log.warning("line search rejected every step scale, keeping the current policy")
    return accepted, diagnostics
