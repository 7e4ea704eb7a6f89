"""Network engine tests: exact gradients against central finite
differences, distribution math against closed forms, checkpoint fidelity."""

import math

import numpy as np
import pytest

from safelab.nets import (
    Adam,
    Architecture,
    GaussianPolicy,
    MlpParams,
    backward,
    forward,
    init_mlp,
    jvp_params,
    kl,
    layer_views,
    load_checkpoint,
    load_policy,
    log_prob,
    make_policy,
    policy_flat,
    policy_from_flat,
    sample,
    save_checkpoint,
    save_policy,
    sigmoid,
)


def fd_grad(f, x0, h=1e-5):
    """Central finite differences of a scalar function on a flat vector."""
    g = np.empty_like(x0)
    for i in range(x0.size):
        xp = x0.copy()
        xm = x0.copy()
        xp[i] += h
        xm[i] -= h
        g[i] = (f(xp) - f(xm)) / (2.0 * h)
    return g


def random_arch(rng):
    depth = rng.integers(0, 3)
    sizes = [int(rng.integers(1, 7))]
    for _ in range(depth):
        sizes.append(int(rng.integers(1, 7)))
    sizes.append(int(rng.integers(1, 4)))
    hidden = ("tanh", "sigmoid")[rng.integers(2)]
    out = ("identity", "sigmoid", "tanh")[rng.integers(3)]
    return Architecture(tuple(sizes), hidden, out)


def test_param_count_counts_weights_and_biases():
    assert Architecture((8, 4, 1)).param_count() == 41
    assert Architecture((3, 2)).param_count() == 8
    assert Architecture((21, 32, 32, 2)).param_count() == (21 + 1) * 32 + 33 * 32 + 33 * 2


def test_zero_params_sigmoid_gives_half():
    arch = Architecture((8, 4, 1), hidden_activation="sigmoid", output_activation="sigmoid")
    params = MlpParams(arch, np.zeros(arch.param_count()))
    out = forward(params, np.linspace(0, 1, 8))
    assert out.shape == (1,)
    assert out[0] == 0.5


def test_single_identity_layer_reproduces_input():
    arch = Architecture((4, 4), output_activation="identity")
    params = MlpParams(arch, np.zeros(arch.param_count()))
    w, b = layer_views(params)[0]
    w[:] = np.eye(4)
    x = np.array([0.3, -1.2, 5.0, 0.0])
    assert np.array_equal(forward(params, x), x)


def test_forward_batch_matches_single():
    rng = np.random.default_rng(3)
    arch = Architecture((5, 7, 2))
    params = MlpParams(arch, rng.standard_normal(arch.param_count()))
    xs = rng.standard_normal((11, 5))
    batch = forward(params, xs)
    for i in range(11):
        assert np.allclose(batch[i], forward(params, xs[i]), atol=1e-14)


def test_dimension_mismatch_raises():
    arch = Architecture((5, 2))
    params = MlpParams(arch, np.zeros(arch.param_count()))
    with pytest.raises(ValueError):
        forward(params, np.zeros(4))
    with pytest.raises(ValueError):
        MlpParams(arch, np.zeros(7))
    with pytest.raises(ValueError):
        backward(params, np.zeros(5), np.zeros(3))


def test_backward_matches_finite_differences():
    rng = np.random.default_rng(7)
    for _ in range(25):
        arch = random_arch(rng)
        params = MlpParams(arch, rng.standard_normal(arch.param_count()))
        x = rng.standard_normal(arch.in_dim)
        upstream = rng.standard_normal(arch.out_dim)

        def scalar(v):
            return float(upstream @ forward(MlpParams(arch, v), x))

        grad, _ = backward(params, x, upstream)
        ref = fd_grad(scalar, params.values.copy())
        denom = max(np.abs(ref).max(), 1e-8)
        assert np.abs(grad - ref).max() / denom < 1e-6


def test_backward_input_grad_matches_finite_differences():
    rng = np.random.default_rng(11)
    arch = Architecture((6, 5, 3), "tanh", "sigmoid")
    params = MlpParams(arch, rng.standard_normal(arch.param_count()))
    x = rng.standard_normal(6)
    upstream = rng.standard_normal(3)

    def scalar(v):
        return float(upstream @ forward(params, v))

    _, input_grad = backward(params, x, upstream)
    ref = fd_grad(scalar, x.copy())
    assert np.abs(input_grad - ref).max() < 1e-7


def test_backward_batch_sums_over_entries():
    rng = np.random.default_rng(13)
    arch = Architecture((4, 3, 2))
    params = MlpParams(arch, rng.standard_normal(arch.param_count()))
    xs = rng.standard_normal((9, 4))
    ups = rng.standard_normal((9, 2))
    g_batch, gi_batch = backward(params, xs, ups)
    g_sum = np.zeros_like(params.values)
    for i in range(9):
        g, gi = backward(params, xs[i], ups[i])
        g_sum += g
        assert np.allclose(gi, gi_batch[i], atol=1e-12)
    assert np.allclose(g_batch, g_sum, atol=1e-12)


def test_zero_upstream_zero_gradient():
    rng = np.random.default_rng(17)
    arch = Architecture((5, 4, 2))
    params = MlpParams(arch, rng.standard_normal(arch.param_count()))
    g, gi = backward(params, rng.standard_normal(5), np.zeros(2))
    assert not g.any()
    assert not gi.any()


def test_single_linear_layer_gradient_is_outer_product():
    arch = Architecture((3, 2))
    rng = np.random.default_rng(19)
    params = MlpParams(arch, rng.standard_normal(arch.param_count()))
    x = rng.standard_normal(3)
    upstream = rng.standard_normal(2)
    g, _ = backward(params, x, upstream)
    expected = np.concatenate([np.outer(upstream, x).ravel(), upstream])
    assert np.allclose(g, expected, atol=1e-14)


def test_jvp_matches_finite_differences():
    rng = np.random.default_rng(23)
    for _ in range(10):
        arch = random_arch(rng)
        params = MlpParams(arch, rng.standard_normal(arch.param_count()))
        x = rng.standard_normal(arch.in_dim)
        v = rng.standard_normal(arch.param_count())
        h = 1e-6
        fp = forward(MlpParams(arch, params.values + h * v), x)
        fm = forward(MlpParams(arch, params.values - h * v), x)
        ref = (fp - fm) / (2.0 * h)
        got = jvp_params(params, x, v)
        assert np.abs(got - ref).max() < 1e-6


def test_jvp_agrees_with_backward():
    # <upstream, J v> must equal <J^T upstream, v>
    rng = np.random.default_rng(29)
    arch = Architecture((6, 8, 3), "tanh", "identity")
    params = MlpParams(arch, rng.standard_normal(arch.param_count()))
    xs = rng.standard_normal((12, 6))
    v = rng.standard_normal(arch.param_count())
    upstream = rng.standard_normal((12, 3))
    lhs = float((upstream * jvp_params(params, xs, v)).sum())
    g, _ = backward(params, xs, upstream)
    rhs = float(g @ v)
    assert abs(lhs - rhs) < 1e-9


def test_sigmoid_is_stable_and_bounded():
    x = np.array([-1e9, -800.0, -37.0, 0.0, 37.0, 800.0, 1e9])
    y = sigmoid(x)
    assert np.all(np.isfinite(y))
    assert np.all(y >= 0.0) and np.all(y <= 1.0)
    assert y[3] == 0.5


def test_init_respects_gains_and_seeds():
    rng1 = np.random.default_rng(5)
    rng2 = np.random.default_rng(5)
    arch = Architecture((10, 16, 2))
    a = init_mlp(arch, rng1, output_gain=0.01)
    b = init_mlp(arch, rng2, output_gain=0.01)
    assert np.array_equal(a.values, b.values)
    w_last, b_last = layer_views(a)[-1]
    assert np.abs(w_last).max() <= 0.011
    assert not b_last.any()


# --- Gaussian policy -------------------------------------------------------


def test_log_prob_standard_normal_at_mean():
    rng = np.random.default_rng(31)
    policy = make_policy(4, 2, (8,), rng, log_std_init=0.0)
    obs = rng.standard_normal(4)
    mean = forward(policy.mean_net, obs)
    lp = log_prob(policy, obs, mean)
    assert abs(lp - (-math.log(2.0 * math.pi))) < 1e-12


def test_log_prob_matches_density_formula():
    rng = np.random.default_rng(37)
    policy = make_policy(3, 2, (6,), rng, log_std_init=-0.3)
    obs = rng.standard_normal(3)
    action = rng.standard_normal(2)
    mean = forward(policy.mean_net, obs)
    std = np.exp(policy.log_std)
    ref = sum(
        -0.5 * ((action[i] - mean[i]) / std[i]) ** 2
        - math.log(std[i])
        - 0.5 * math.log(2 * math.pi)
        for i in range(2)
    )
    assert abs(log_prob(policy, obs, action) - ref) < 1e-12


def test_kl_identity_is_zero_and_shifted_mean_is_half():
    rng = np.random.default_rng(41)
    policy = make_policy(3, 2, (6,), rng, log_std_init=0.0)
    obs = rng.standard_normal((20, 3))
    assert kl(policy, policy, obs) == 0.0
    shifted = policy.copy()
    w, b = layer_views(shifted.mean_net)[-1]
    b += 1.0  # mean moved by 1 in each of 2 dims, unit variance
    assert abs(kl(policy, shifted, obs) - 1.0) < 1e-12


def test_kl_nonnegative_property():
    rng = np.random.default_rng(43)
    for _ in range(50):
        p = make_policy(4, 2, (5,), rng, log_std_init=float(rng.uniform(-1, 0.5)))
        q = make_policy(4, 2, (5,), rng, log_std_init=float(rng.uniform(-1, 0.5)))
        obs = rng.standard_normal((8, 4))
        assert kl(p, q, obs) >= 0.0


def test_log_std_clamped_on_construction():
    policy = GaussianPolicy(
        init_mlp(Architecture((3, 2)), np.random.default_rng(0)),
        np.array([-50.0, 7.0]),
    )
    assert policy.log_std[0] == -20.0
    assert policy.log_std[1] == 2.0


def test_policy_flat_round_trip():
    rng = np.random.default_rng(47)
    policy = make_policy(5, 2, (6, 6), rng)
    flat = policy_flat(policy)
    rebuilt = policy_from_flat(policy, flat)
    assert np.array_equal(policy_flat(rebuilt), flat)
    flat2 = flat + 0.25
    moved = policy_from_flat(policy, flat2)
    assert np.array_equal(moved.mean_net.values, flat2[:-2])


def test_sample_is_deterministic_given_rng_state():
    rng = np.random.default_rng(53)
    policy = make_policy(4, 2, (8,), rng)
    obs = rng.standard_normal(4)
    a1, lp1 = sample(policy, obs, np.random.default_rng(99))
    a2, lp2 = sample(policy, obs, np.random.default_rng(99))
    assert np.array_equal(a1, a2) and lp1 == lp2
    assert abs(lp1 - log_prob(policy, obs, a1)) < 1e-12


def test_adam_descends_quadratic():
    opt = Adam(3, lr=0.1)
    x = np.array([5.0, -3.0, 2.0])
    for _ in range(300):
        x = opt.step(x, 2.0 * x)
    assert np.abs(x).max() < 1e-2


# --- checkpoints -----------------------------------------------------------


def test_checkpoint_round_trip_bitwise(tmp_path):
    rng = np.random.default_rng(59)
    arch = Architecture((8, 4, 1), "sigmoid", "sigmoid")
    params = MlpParams(arch, rng.standard_normal(41))
    extra = rng.standard_normal(5)
    path = tmp_path / "ck.bin"
    save_checkpoint(path, {"net": params, "extra": extra}, {"note": "x"})
    arrays, meta = load_checkpoint(path)
    assert meta == {"note": "x"}
    assert isinstance(arrays["net"], MlpParams)
    assert arrays["net"].arch == arch
    assert np.array_equal(arrays["net"].values, params.values)
    assert np.array_equal(arrays["extra"], extra)


def test_policy_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(61)
    policy = make_policy(6, 2, (8, 8), rng)
    path = tmp_path / "pol.bin"
    save_policy(path, policy, {"iterations": 3})
    loaded, meta = load_policy(path)
    assert meta["iterations"] == 3
    assert np.array_equal(policy_flat(loaded), policy_flat(policy))
