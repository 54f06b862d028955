"""Feedforward rebalancing policy: features (t, wealth) -> simplex weights.

One small fully-connected network is shared across all rebalancing
times. Hidden layers use the logistic sigmoid, the output layer a
max-shifted softmax, so the weights are strictly positive and sum to
one (long-only, fully invested). Parameters live in one flat vector
`theta` laid out layer by layer (weight matrix row-major, then bias),
which keeps the optimizer and serialization trivial.

forward/backward accept scalars or batched arrays over paths; backward
returns the theta-gradient summed over the batch plus the per-path
wealth cotangent needed to continue backpropagation through the wealth
recursion (wealth at the next rebalance depends on today's weights).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace

import numpy as np

# Flat gradient vector aligned with PolicyNetwork.theta.
Gradient = np.ndarray


class PolicyError(ValueError):
    pass


class StaleCacheError(RuntimeError):
    pass


@dataclass(frozen=True)
class NetTopology:
    """Layer sizes: n_features -> hidden_width x hidden_layers -> n_assets."""

    hidden_layers: int
    hidden_width: int
    n_assets: int
    n_features: int = 2

    def __post_init__(self) -> None:
        if self.hidden_layers < 1 or self.hidden_width < 1 or self.n_features < 1:
            raise PolicyError("all topology counts must be >= 1")
        if self.n_assets < 2:
            raise PolicyError("n_assets must be >= 2")

    def layer_dims(self) -> list[tuple[int, int]]:
        """(fan_in, fan_out) per affine layer, input to output."""
        widths = [self.n_features] + [self.hidden_width] * self.hidden_layers + [
            self.n_assets
        ]
        return list(zip(widths[:-1], widths[1:]))

    def n_parameters(self) -> int:
        return sum(fi * fo + fo for fi, fo in self.layer_dims())


def layer_slices(topology: NetTopology) -> list[tuple[slice, slice]]:
    """(weight_slice, bias_slice) into the flat theta vector, per layer."""
    out = []
    pos = 0
    for fan_in, fan_out in topology.layer_dims():
        w = slice(pos, pos + fan_in * fan_out)
        pos += fan_in * fan_out
        b = slice(pos, pos + fan_out)
        pos += fan_out
        out.append((w, b))
    return out


@dataclass(frozen=True)
class PolicyNetwork:
    """Topology + flat parameters + affine per-feature input scaling.

    Features are mapped to (x - feature_offset) * feature_scale before
    the first layer. The default transform is the identity; experiment
    setup normally configures scale (1/T, 1/w0).
    """

    topology: NetTopology
    theta: np.ndarray
    feature_offset: np.ndarray
    feature_scale: np.ndarray

    def __post_init__(self) -> None:
        theta = np.asarray(self.theta, dtype=float)
        if theta.shape != (self.topology.n_parameters(),):
            raise PolicyError(
                f"theta has length {theta.shape}, topology needs "
                f"({self.topology.n_parameters()},)"
            )
        off = np.asarray(self.feature_offset, dtype=float)
        sca = np.asarray(self.feature_scale, dtype=float)
        if off.shape != (self.topology.n_features,) or sca.shape != (
            self.topology.n_features,
        ):
            raise PolicyError("feature transform shape does not match n_features")
        for arr, name in ((theta, "theta"), (off, "offset"), (sca, "scale")):
            if not np.all(np.isfinite(arr)):
                raise PolicyError(f"non-finite {name}")
            arr.flags.writeable = False
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "feature_offset", off)
        object.__setattr__(self, "feature_scale", sca)

    def with_theta(self, theta: np.ndarray) -> "PolicyNetwork":
        return replace(self, theta=theta)


def init_parameters(
    topology: NetTopology,
    seed: int,
    feature_offset: np.ndarray | None = None,
    feature_scale: np.ndarray | None = None,
) -> PolicyNetwork:
    """Seeded init: weights uniform on +-sqrt(6/(fan_in+fan_out)), biases 0."""
    rng = np.random.Generator(np.random.Philox(key=seed & ((1 << 128) - 1)))
    theta = np.zeros(topology.n_parameters())
    for (w_sl, _), (fan_in, fan_out) in zip(
        layer_slices(topology), topology.layer_dims()
    ):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        theta[w_sl] = rng.uniform(-bound, bound, size=fan_in * fan_out)
    if feature_offset is None:
        feature_offset = np.zeros(topology.n_features)
    if feature_scale is None:
        feature_scale = np.ones(topology.n_features)
    return PolicyNetwork(
        topology=topology,
        theta=theta,
        feature_offset=np.asarray(feature_offset, dtype=float),
        feature_scale=np.asarray(feature_scale, dtype=float),
    )


@dataclass
class ActivationRecord:
    """Everything backward() needs from one forward() call."""

    features: np.ndarray  # scaled inputs, (batch, n_features)
    hidden: list[np.ndarray]  # sigmoid activations per hidden layer
    probs: np.ndarray  # softmax outputs, (batch, n_assets)
    theta_ref: np.ndarray  # identity token: the theta used in the pass
    scalar_input: bool


def _sigmoid(y: np.ndarray) -> np.ndarray:
    out = np.empty_like(y)
    pos = y >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-y[pos]))
    ey = np.exp(y[~pos])
    out[~pos] = ey / (1.0 + ey)
    return out


def _layer_params(net: PolicyNetwork) -> list[tuple[np.ndarray, np.ndarray]]:
    out = []
    for (w_sl, b_sl), (fan_in, fan_out) in zip(
        layer_slices(net.topology), net.topology.layer_dims()
    ):
        out.append((net.theta[w_sl].reshape(fan_out, fan_in), net.theta[b_sl]))
    return out


def forward(
    net: PolicyNetwork, t, wealth
) -> tuple[np.ndarray, ActivationRecord]:
    """Evaluate the policy at (t, wealth); scalars or (batch,) arrays.

    Returns (weights, cache): weights on the simplex, shape (n_assets,)
    for scalar input or (batch, n_assets) otherwise.
    """
    if net.topology.n_features != 2:
        raise PolicyError("policy expects the 2-feature form (t, wealth)")
    scalar_input = np.ndim(t) == 0 and np.ndim(wealth) == 0
    t_arr, w_arr = np.broadcast_arrays(
        np.atleast_1d(np.asarray(t, dtype=float)),
        np.atleast_1d(np.asarray(wealth, dtype=float)),
    )
    if not (np.all(np.isfinite(t_arr)) and np.all(np.isfinite(w_arr))):
        raise PolicyError("invalid feature")
    phi = np.stack([t_arr, w_arr], axis=1)
    phi = (phi - net.feature_offset) * net.feature_scale
    params = _layer_params(net)
    hidden: list[np.ndarray] = []
    a = phi
    for w, b in params[:-1]:
        a = _sigmoid(a @ w.T + b)
        hidden.append(a)
    w_out, b_out = params[-1]
    logits = a @ w_out.T + b_out
    logits -= logits.max(axis=1, keepdims=True)
    e = np.exp(logits)
    probs = e / e.sum(axis=1, keepdims=True)
    cache = ActivationRecord(
        features=phi,
        hidden=hidden,
        probs=probs,
        theta_ref=net.theta,
        scalar_input=scalar_input,
    )
    return (probs[0] if scalar_input else probs), cache


def backward(
    net: PolicyNetwork, cache: ActivationRecord, d_weights: np.ndarray
) -> tuple[Gradient, np.ndarray]:
    """Pullback of d_weights . weights through the network.

    Returns (d_theta, d_wealth): the flat parameter gradient summed over
    the batch, and the per-path derivative with respect to the wealth
    input (the time channel is exogenous and its gradient is dropped).
    For a scalar forward call d_wealth is a float.
    """
    if cache.theta_ref is not net.theta:
        raise StaleCacheError("stale cache")
    d_w = np.atleast_2d(np.asarray(d_weights, dtype=float))
    p = cache.probs
    if d_w.shape != p.shape:
        raise StaleCacheError("stale cache")
    params = _layer_params(net)
    slices = layer_slices(net.topology)
    d_theta = np.zeros_like(net.theta)

    # Softmax Jacobian: dz_j = p_j (d_j - sum_k p_k d_k).
    dz = p * (d_w - (d_w * p).sum(axis=1, keepdims=True))
    acts = [cache.features, *cache.hidden]
    for layer in range(len(params) - 1, -1, -1):
        w, _ = params[layer]
        w_sl, b_sl = slices[layer]
        a_prev = acts[layer]
        d_theta[w_sl] = (dz.T @ a_prev).ravel()
        d_theta[b_sl] = dz.sum(axis=0)
        da = dz @ w
        if layer > 0:
            h = cache.hidden[layer - 1]
            dz = da * h * (1.0 - h)
    d_features = da * net.feature_scale
    d_wealth = d_features[:, 1]
    return d_theta, (float(d_wealth[0]) if cache.scalar_input else d_wealth)


def to_dict(net: PolicyNetwork) -> dict:
    return {
        "topology": {
            "n_features": net.topology.n_features,
            "hidden_layers": net.topology.hidden_layers,
            "hidden_width": net.topology.hidden_width,
            "n_assets": net.topology.n_assets,
        },
        "feature_offset": [float(x) for x in net.feature_offset],
        "feature_scale": [float(x) for x in net.feature_scale],
        "theta": [float(x) for x in net.theta],
    }


def from_dict(d: dict) -> PolicyNetwork:
    topo = NetTopology(
        hidden_layers=int(d["topology"]["hidden_layers"]),
        hidden_width=int(d["topology"]["hidden_width"]),
        n_assets=int(d["topology"]["n_assets"]),
        n_features=int(d["topology"].get("n_features", 2)),
    )
    return PolicyNetwork(
        topology=topo,
        theta=np.asarray(d["theta"], dtype=float),
        feature_offset=np.asarray(d["feature_offset"], dtype=float),
        feature_scale=np.asarray(d["feature_scale"], dtype=float),
    )


def save_policy(net: PolicyNetwork, path: str) -> None:
    with open(path, "w") as fh:
        json.dump(to_dict(net), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_policy(path: str) -> PolicyNetwork:
    with open(path) as fh:
        return from_dict(json.load(fh))
