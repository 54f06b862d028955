"""Mini-batch SGD on (theta, xi): Adam with tail iterate averaging.

One training step: draw the next mini-batch of path indices (each epoch
is a fresh permutation, indices used exactly once per epoch), roll the
wealth recursion forward, seed backpropagation with the objective
cotangents, and apply a bias-corrected Adam update. From step
floor(tail_average_start_fraction * max_steps) onward the post-update
iterates are averaged; the average is what the trained policy keeps
(variance reduction of the final estimate). The auxiliary CVaR variable
xi, when present, is simply one extra Adam coordinate initialized at
w0.

Training is deterministic in (seed, config, inputs).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .market import ReturnPathSet, _philox
from .objectives import ObjectiveSpec, cotangents, evaluate
from .policy import Gradient, PolicyNetwork
from .wealth import InvestmentHorizon, backprop_through_time, roll_forward

# Gradient-norm clip and the evaluation chunk used for full-set passes.
GRAD_CLIP_NORM = 1e3
EVAL_CHUNK = 131072


class TrainerError(ValueError):
    pass


class TrainingDivergedError(RuntimeError):
    pass


@dataclass(frozen=True)
class AdamParams:
    step_size: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps_hat: float = 1e-8

    def __post_init__(self) -> None:
        if not self.step_size > 0:
            raise TrainerError("step_size must be > 0")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise TrainerError("beta1 and beta2 must be in [0, 1)")
        if not self.eps_hat > 0:
            raise TrainerError("eps_hat must be > 0")


@dataclass(frozen=True)
class TrainConfig:
    max_steps: int
    batch_size: int
    adam: AdamParams = AdamParams()
    tail_average_start_fraction: float = 0.8
    seed: int = 0
    log_every: int = 100

    def __post_init__(self) -> None:
        if self.max_steps < 1 or self.batch_size < 1:
            raise TrainerError("max_steps and batch_size must be >= 1")
        if not 0.0 <= self.tail_average_start_fraction < 1.0:
            raise TrainerError("tail_average_start_fraction must be in [0, 1)")
        if self.log_every < 1:
            raise TrainerError("log_every must be >= 1")


@dataclass
class AdamState:
    """Current parameters plus first/second moment estimates."""

    params: np.ndarray
    m: np.ndarray
    v: np.ndarray

    @classmethod
    def fresh(cls, params: np.ndarray) -> "AdamState":
        params = np.asarray(params, dtype=float)
        return cls(params=params.copy(), m=np.zeros_like(params), v=np.zeros_like(params))


def adam_step(
    state: AdamState, grad: Gradient, step_index: int, cfg: AdamParams
) -> AdamState:
    """One bias-corrected Adam update; step_index counts from 1."""
    if grad.shape != state.params.shape:
        raise TrainerError("gradient/state size mismatch")
    if step_index < 1:
        raise TrainerError("step_index counts from 1")
    m = cfg.beta1 * state.m + (1.0 - cfg.beta1) * grad
    v = cfg.beta2 * state.v + (1.0 - cfg.beta2) * grad * grad
    m_hat = m / (1.0 - cfg.beta1**step_index)
    v_hat = v / (1.0 - cfg.beta2**step_index)
    params = state.params - cfg.step_size * m_hat / (np.sqrt(v_hat) + cfg.eps_hat)
    return AdamState(params=params, m=m, v=v)


@dataclass
class TrainedPolicy:
    net: PolicyNetwork
    xi_star: float | None
    history: list[tuple[int, float, float]]  # (step, batch_objective, grad_norm)
    final_full_objective: float


def _minibatch_indices(n_paths: int, batch_size: int, rng: np.random.Generator):
    """Yield index batches; permutation per epoch, each index once."""
    while True:
        order = rng.permutation(n_paths)
        for start in range(0, n_paths, batch_size):
            yield order[start : start + batch_size]


def full_objective(
    net: PolicyNetwork,
    horizon: InvestmentHorizon,
    paths: ReturnPathSet,
    spec: ObjectiveSpec,
    xi: float = 0.0,
) -> tuple[float, np.ndarray]:
    """Objective over the whole path set (full-sample mean in G-terms).

    Returns (value, terminal_wealth). Rolls in chunks without caches so
    memory stays O(chunk).
    """
    terminal = np.empty(paths.n_paths)
    for start in range(0, paths.n_paths, EVAL_CHUNK):
        idx = np.arange(start, min(start + EVAL_CHUNK, paths.n_paths))
        terminal[idx] = roll_forward(
            net, horizon, paths, idx, retain=False
        ).terminal_wealth
    value = evaluate(spec, terminal, horizon.w0, xi).value
    return value, terminal


def train(
    net0: PolicyNetwork,
    horizon: InvestmentHorizon,
    paths: ReturnPathSet,
    spec: ObjectiveSpec,
    cfg: TrainConfig,
    _iterate_log: list | None = None,
) -> TrainedPolicy:
    """Minimize the sample objective over (theta, xi) by Gadam.

    _iterate_log is internal: when a list is passed, the post-update
    parameter vector of every step is appended (test instrumentation).
    """
    if paths.n_periods != horizon.N_rb:
        raise TrainerError("path set period count does not match horizon")
    if cfg.batch_size > paths.n_paths:
        raise TrainerError("batch_size exceeds n_paths")
    nu = net0.topology.n_parameters()
    if spec.has_xi:
        params0 = np.concatenate([net0.theta, [horizon.w0]])
    else:
        params0 = net0.theta.copy()
    state = AdamState.fresh(params0)
    rng = _philox(cfg.seed, 0)
    batches = _minibatch_indices(paths.n_paths, cfg.batch_size, rng)
    tail_start = max(1, math.floor(cfg.tail_average_start_fraction * cfg.max_steps))
    tail_sum = np.zeros_like(params0)
    tail_count = 0
    history: list[tuple[int, float, float]] = []
    for step in range(1, cfg.max_steps + 1):
        idx = next(batches)
        net = net0.with_theta(state.params[:nu])
        xi = float(state.params[nu]) if spec.has_xi else 0.0
        batch = roll_forward(net, horizon, paths, idx, retain=True)
        value = evaluate(spec, batch.terminal_wealth, horizon.w0, xi).value
        if not np.isfinite(value):
            raise TrainingDivergedError(f"training diverged at step {step}")
        d_terminal, d_xi = cotangents(spec, batch.terminal_wealth, xi)
        g_theta = backprop_through_time(net, batch, d_terminal)
        grad = np.concatenate([g_theta, [d_xi]]) if spec.has_xi else g_theta
        gnorm = float(np.linalg.norm(grad))
        if gnorm > GRAD_CLIP_NORM:
            grad = grad * (GRAD_CLIP_NORM / gnorm)
        state = adam_step(state, grad, step, cfg.adam)
        if _iterate_log is not None:
            _iterate_log.append(state.params.copy())
        if step >= tail_start:
            tail_sum += state.params
            tail_count += 1
        if step == 1 or step == cfg.max_steps or step % cfg.log_every == 0:
            history.append((step, value, gnorm))
    averaged = tail_sum / tail_count
    net_star = net0.with_theta(averaged[:nu])
    xi_star = float(averaged[nu]) if spec.has_xi else None
    final_value, _ = full_objective(
        net_star, horizon, paths, spec, xi_star if spec.has_xi else 0.0
    )
    if not np.isfinite(final_value):
        raise TrainingDivergedError("training diverged (non-finite final objective)")
    return TrainedPolicy(
        net=net_star,
        xi_star=xi_star,
        history=history,
        final_full_objective=final_value,
    )


def training_log_csv(history: list[tuple[int, float, float]], path: str) -> None:
    with open(path, "w") as fh:
        fh.write("step,batch_objective,grad_norm\n")
        for step, value, gnorm in history:
            fh.write(f"{step},{value:.12g},{gnorm:.12g}\n")


def save_checkpoint(path: str, net: PolicyNetwork, state: AdamState, step: int) -> None:
    """Serialize network + optimizer state for warm restarts."""
    from .policy import to_dict

    payload = {
        "net": to_dict(net),
        "adam": {
            "params": [float(x) for x in state.params],
            "m": [float(x) for x in state.m],
            "v": [float(x) for x in state.v],
        },
        "step": step,
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_checkpoint(path: str) -> tuple[PolicyNetwork, AdamState, int]:
    from .policy import from_dict

    with open(path) as fh:
        payload = json.load(fh)
    state = AdamState(
        params=np.asarray(payload["adam"]["params"], dtype=float),
        m=np.asarray(payload["adam"]["m"], dtype=float),
        v=np.asarray(payload["adam"]["v"], dtype=float),
    )
    return from_dict(payload["net"]), state, int(payload["step"])
