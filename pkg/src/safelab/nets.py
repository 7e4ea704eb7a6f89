"""Dense-network engine: tiny MLPs on flat float64 parameter vectors.

Everything the learners need from a network lives here: forward passes,
exact reverse-mode gradients, forward-mode directional derivatives (used
for curvature-vector products), a diagonal-Gaussian policy head, a
flat-vector Adam, and a small binary checkpoint format.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

LOG_STD_MIN = -20.0
LOG_STD_MAX = 2.0
_LOG_2PI = math.log(2.0 * math.pi)

_ACTIVATIONS = ("tanh", "sigmoid", "identity")


def sigmoid(x):
    # clip keeps exp() finite; saturates smoothly at the float64 limits
    return 1.0 / (1.0 + np.exp(-np.clip(x, -709.0, 709.0)))


@dataclass(frozen=True)
class Architecture:
    """Layer sizes plus activation choices for a dense network."""

    layer_sizes: tuple[int, ...]
    hidden_activation: str = "tanh"
    output_activation: str = "identity"

    def __post_init__(self):
        object.__setattr__(self, "layer_sizes", tuple(int(n) for n in self.layer_sizes))
        if len(self.layer_sizes) < 2:
            raise ValueError("architecture needs at least input and output sizes")
        if any(n <= 0 for n in self.layer_sizes):
            raise ValueError(f"layer sizes must be positive, got {self.layer_sizes}")
        for act in (self.hidden_activation, self.output_activation):
            if act not in _ACTIVATIONS:
                raise ValueError(f"unknown activation {act!r}")

    @property
    def in_dim(self):
        return self.layer_sizes[0]

    @property
    def out_dim(self):
        return self.layer_sizes[-1]

    def param_count(self) -> int:
        sizes = self.layer_sizes
        return sum((n_in + 1) * n_out for n_in, n_out in zip(sizes[:-1], sizes[1:]))


@dataclass
class MlpParams:
    """An architecture plus one flat float64 vector holding, per layer,
    the weight matrix (out x in, row-major) followed by the bias."""

    arch: Architecture
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 1:
            raise ValueError("parameter vector must be one-dimensional")
        if v.size != self.arch.param_count():
            raise ValueError(
                f"expected {self.arch.param_count()} parameters for "
                f"{self.arch.layer_sizes}, got {v.size}"
            )
        self.values = v

    def copy(self) -> "MlpParams":
        return MlpParams(self.arch, self.values.copy())


def layer_views(params: MlpParams):
    """(W, b) views into the flat vector, one pair per layer. Writes through."""
    sizes = params.arch.layer_sizes
    v = params.values
    out = []
    off = 0
    for n_in, n_out in zip(sizes[:-1], sizes[1:]):
        w = v[off:off + n_in * n_out].reshape(n_out, n_in)
        off += n_in * n_out
        b = v[off:off + n_out]
        off += n_out
        out.append((w, b))
    return out


def _layer_activations(arch: Architecture):
    n_layers = len(arch.layer_sizes) - 1
    return [arch.output_activation if i == n_layers - 1 else arch.hidden_activation
            for i in range(n_layers)]


def _apply_act(z, act):
    if act == "tanh":
        return np.tanh(z)
    if act == "sigmoid":
        return sigmoid(z)
    return z


def _act_deriv(a, act):
    # derivative expressed through the activation output
    if act == "tanh":
        return 1.0 - a * a
    if act == "sigmoid":
        return a * (1.0 - a)
    return np.ones_like(a)


def _check_input(params, x):
    if x.shape[-1] != params.arch.in_dim:
        raise ValueError(
            f"input has {x.shape[-1]} features, network expects {params.arch.in_dim}"
        )


def _forward_cached(params, x):
    acts = [x]
    a = x
    for (w, b), act in zip(layer_views(params), _layer_activations(params.arch)):
        z = a @ w.T + b if a.ndim > 1 else w @ a + b
        a = _apply_act(z, act)
        acts.append(a)
    return acts


def forward(params: MlpParams, x) -> np.ndarray:
    """Evaluate the network on a single input (n,) or a batch (B, n)."""
    x = np.asarray(x, dtype=np.float64)
    _check_input(params, x)
    return _forward_cached(params, x)[-1]


def backward(params: MlpParams, x, upstream):
    """Gradient of upstream . forward(params, x).

    Returns (param_grad, input_grad). For batched inputs the parameter
    gradient is summed over the batch; the input gradient keeps the batch
    dimension. Weighting and averaging are the caller's business.
    """
    x = np.asarray(x, dtype=np.float64)
    upstream = np.asarray(upstream, dtype=np.float64)
    _check_input(params, x)
    if upstream.shape != x.shape[:-1] + (params.arch.out_dim,):
        raise ValueError(
            f"upstream has shape {upstream.shape}, expected "
            f"{x.shape[:-1] + (params.arch.out_dim,)}"
        )
    acts = _forward_cached(params, x)
    layers = layer_views(params)
    layer_acts = _layer_activations(params.arch)
    batched = x.ndim > 1

    grads = [None] * len(layers)
    if layer_acts[-1] == "identity":
        delta = upstream
    else:
        delta = upstream * _act_deriv(acts[-1], layer_acts[-1])
    input_grad = None
    for i in reversed(range(len(layers))):
        w, _ = layers[i]
        a_prev = acts[i]
        if batched:
            gw = delta.T @ a_prev
            gb = delta.sum(axis=0)
            back = delta @ w
        else:
            gw = np.outer(delta, a_prev)
            gb = delta.copy()
            back = w.T @ delta
        grads[i] = (gw, gb)
        if i > 0:
            delta = back * _act_deriv(acts[i], layer_acts[i - 1])
        else:
            input_grad = back
    param_grad = np.concatenate([np.concatenate([gw.ravel(), gb]) for gw, gb in grads])
    return param_grad, input_grad


def jvp_params(params: MlpParams, x, tangent_values) -> np.ndarray:
    """Directional derivative of forward(params, x) along a parameter
    tangent (same flat layout as params.values). Input held fixed."""
    x = np.asarray(x, dtype=np.float64)
    _check_input(params, x)
    tangent = MlpParams(params.arch, np.asarray(tangent_values, dtype=np.float64))
    a = x
    da = None
    for (w, b), (dw, db), act in zip(
        layer_views(params), layer_views(tangent), _layer_activations(params.arch)
    ):
        if a.ndim > 1:
            dz = a @ dw.T + db
            if da is not None:
                dz = dz + da @ w.T
            z = a @ w.T + b
        else:
            dz = dw @ a + db
            if da is not None:
                dz = dz + w @ da
            z = w @ a + b
        a = _apply_act(z, act)
        da = _act_deriv(a, act) * dz
    return da


def _orthogonal(rng, rows, cols):
    big, small = max(rows, cols), min(rows, cols)
    a = rng.standard_normal((big, small))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return np.ascontiguousarray(q[:rows, :cols])


def init_mlp(arch: Architecture, rng, output_gain=1.0, hidden_gain=1.0) -> MlpParams:
    """Scaled orthogonal weight init, zero biases."""
    sizes = arch.layer_sizes
    last = len(sizes) - 2
    chunks = []
    for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        gain = output_gain if i == last else hidden_gain
        chunks.append((gain * _orthogonal(rng, n_out, n_in)).ravel())
        chunks.append(np.zeros(n_out))
    return MlpParams(arch, np.concatenate(chunks))


# --- diagonal-Gaussian policy head ----------------------------------------


@dataclass
class GaussianPolicy:
    """MLP mean plus a state-independent log-std vector, clamped to
    [LOG_STD_MIN, LOG_STD_MAX] on construction."""

    mean_net: MlpParams
    log_std: np.ndarray

    def __post_init__(self):
        ls = np.asarray(self.log_std, dtype=np.float64)
        self.log_std = np.clip(ls, LOG_STD_MIN, LOG_STD_MAX)

    @property
    def action_dim(self):
        return self.log_std.size

    def copy(self) -> "GaussianPolicy":
        return GaussianPolicy(self.mean_net.copy(), self.log_std.copy())


def make_policy(obs_dim, action_dim, hidden_sizes, rng, log_std_init=-0.5) -> GaussianPolicy:
    arch = Architecture((obs_dim, *hidden_sizes, action_dim))
    # small output gain keeps early actions near zero
    mean_net = init_mlp(arch, rng, output_gain=0.01)
    return GaussianPolicy(mean_net, np.full(action_dim, log_std_init))


def log_prob_given_mean(policy, mean, action):
    std = np.exp(policy.log_std)
    z = (np.asarray(action, dtype=np.float64) - mean) / std
    return (
        -0.5 * (z * z).sum(axis=-1)
        - policy.log_std.sum()
        - 0.5 * _LOG_2PI * policy.action_dim
    )


def log_prob(policy: GaussianPolicy, obs, action):
    """Log density of `action` under the policy at `obs` (batch aware)."""
    return log_prob_given_mean(policy, forward(policy.mean_net, obs), action)


def sample(policy: GaussianPolicy, obs, rng):
    """Draw an action; returns (action, log_prob)."""
    mean = forward(policy.mean_net, obs)
    std = np.exp(policy.log_std)
    action = mean + std * rng.standard_normal(mean.shape)
    return action, log_prob_given_mean(policy, mean, action)


def kl_terms_given_mean(mean_a, log_std_a, policy_b, mean_b):
    var_a = np.exp(2.0 * log_std_a)
    var_b = np.exp(2.0 * policy_b.log_std)
    diff = mean_a - mean_b
    per_dim = policy_b.log_std - log_std_a + (var_a + diff * diff) / (2.0 * var_b) - 0.5
    return per_dim.sum(axis=-1)


def kl(policy_a: GaussianPolicy, policy_b: GaussianPolicy, obs) -> float:
    """Mean analytic KL(a || b) over a batch of observations."""
    mean_a = forward(policy_a.mean_net, obs)
    mean_b = forward(policy_b.mean_net, obs)
    per = kl_terms_given_mean(mean_a, policy_a.log_std, policy_b, mean_b)
    return float(np.mean(per))


def policy_flat(policy: GaussianPolicy) -> np.ndarray:
    """Mean-net parameters concatenated with the log-std block."""
    return np.concatenate([policy.mean_net.values, policy.log_std])


def policy_from_flat(template: GaussianPolicy, flat) -> GaussianPolicy:
    flat = np.asarray(flat, dtype=np.float64)
    n = template.mean_net.values.size
    return GaussianPolicy(
        MlpParams(template.mean_net.arch, flat[:n].copy()), flat[n:].copy()
    )


# --- optimizer -------------------------------------------------------------


class Adam:
    """Adam on a flat vector. step() returns the updated vector (descent);
    pass the negated gradient to ascend."""

    def __init__(self, size, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, values, grad):
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad * grad
        m_hat = self.m / (1.0 - self.beta1 ** self.t)
        v_hat = self.v / (1.0 - self.beta2 ** self.t)
        return values - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


# --- checkpoints -----------------------------------------------------------
# Format: one JSON header line, then the concatenated parameter blobs as
# little-endian float64.


def save_checkpoint(path, arrays: dict, meta: dict | None = None):
    """arrays maps name -> MlpParams or 1-d float array."""
    header = {"format": 1, "meta": meta or {}, "arrays": []}
    blobs = []
    for name, val in arrays.items():
        if isinstance(val, MlpParams):
            entry = {
                "name": name,
                "count": int(val.values.size),
                "arch": {
                    "layer_sizes": list(val.arch.layer_sizes),
                    "hidden_activation": val.arch.hidden_activation,
                    "output_activation": val.arch.output_activation,
                },
            }
            blobs.append(val.values)
        else:
            arr = np.asarray(val, dtype=np.float64).ravel()
            entry = {"name": name, "count": int(arr.size)}
            blobs.append(arr)
        header["arrays"].append(entry)
    data = np.concatenate(blobs) if blobs else np.empty(0)
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        fh.write(b"\n")
        fh.write(data.astype("<f8").tobytes())


def load_checkpoint(path):
    """Returns (arrays, meta); MlpParams are rebuilt where the header
    recorded an architecture."""
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode("utf-8"))
        data = np.frombuffer(fh.read(), dtype="<f8")
    out = {}
    off = 0
    for entry in header["arrays"]:
        chunk = data[off:off + entry["count"]].astype(np.float64)
        off += entry["count"]
        if "arch" in entry:
            a = entry["arch"]
            arch = Architecture(
                tuple(a["layer_sizes"]), a["hidden_activation"], a["output_activation"]
            )
            out[entry["name"]] = MlpParams(arch, chunk)
        else:
            out[entry["name"]] = chunk
    if off != data.size:
        raise ValueError(f"checkpoint payload has {data.size} values, header expects {off}")
    return out, header.get("meta", {})


def save_policy(path, policy: GaussianPolicy, meta: dict | None = None):
    save_checkpoint(path, {"mean_net": policy.mean_net, "log_std": policy.log_std}, meta)


def load_policy(path):
    arrays, meta = load_checkpoint(path)
    return GaussianPolicy(arrays["mean_net"], arrays["log_std"]), meta
