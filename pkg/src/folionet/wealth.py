"""Controlled wealth recursion along return paths, and its adjoint.

Forward: W(t0-) = w0; at each rebalance t_m the contribution q_m is
added, the policy is evaluated at (t_m, W(t_m+)), and wealth grows by
the weighted gross return of the period. Terminal wealth is W(T-); no
contribution or rebalance happens at maturity.

Backward (`backprop_through_time`): reverse sweep of the same chain.
The adjoint of W(t_{m+1}-) splits into the weight cotangent
W(t_m+) * Y(t_m) * lam_{m+1} fed to the network's backward(), and the
wealth cotangent (sum_i p_i Y_i) * lam_{m+1} + d_wealth-from-backward,
which becomes lam_m (the contribution shift has unit Jacobian).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .market import ReturnPathSet
from .policy import ActivationRecord, Gradient, PolicyNetwork, backward, forward


class WealthSimError(ValueError):
    pass


@dataclass(frozen=True)
class InvestmentHorizon:
    """Rebalancing schedule: N_rb events at t_m = m * dt over [0, T].

    contributions may be a scalar (same cash q at every rebalance,
    including t0) or a length-N_rb vector. Withdrawals (negative q) are
    rejected so wealth stays positive for any long-only policy.
    """

    T: float
    N_rb: int
    w0: float
    contributions: np.ndarray = 0.0
    t0: float = 0.0

    def __post_init__(self) -> None:
        if not self.T > 0:
            raise WealthSimError("T must be > 0")
        if self.N_rb < 1:
            raise WealthSimError("N_rb must be >= 1")
        if not self.w0 > 0:
            raise WealthSimError("w0 must be > 0")
        if self.t0 != 0.0:
            raise WealthSimError("horizon starts at t0 = 0")
        q = np.asarray(self.contributions, dtype=float)
        if q.ndim == 0:
            q = np.full(self.N_rb, float(q))
        if q.shape != (self.N_rb,):
            raise WealthSimError("contributions must be scalar or length N_rb")
        if not np.all(np.isfinite(q)) or np.any(q < 0):
            raise WealthSimError("contributions must be finite and >= 0")
        q.flags.writeable = False
        object.__setattr__(self, "contributions", q)
        if abs(self.dt * self.N_rb - self.T) > 1e-12 * max(1.0, self.T):
            raise WealthSimError("dt * N_rb must equal T")

    @property
    def dt(self) -> float:
        return self.T / self.N_rb

    def rebalance_times(self) -> np.ndarray:
        return np.arange(self.N_rb) * self.dt


@dataclass
class _StepRecord:
    wealth_plus: np.ndarray  # W(t_m+), (batch,)
    weights: np.ndarray  # p(t_m), (batch, n_assets)
    growth: np.ndarray  # sum_i p_i Y_i, (batch,)
    returns: np.ndarray  # Y(t_m) slice, (batch, n_assets)
    cache: ActivationRecord


@dataclass
class WealthTrajectoryBatch:
    """Terminal wealths plus (optionally) the per-step records for BPTT."""

    terminal_wealth: np.ndarray
    records: list[_StepRecord] | None
    horizon: InvestmentHorizon


def roll_forward(
    net: PolicyNetwork,
    horizon: InvestmentHorizon,
    paths: ReturnPathSet,
    path_indices: np.ndarray | None = None,
    retain: bool = True,
) -> WealthTrajectoryBatch:
    """Run the wealth recursion along the selected paths.

    path_indices selects rows of the path set (None = all paths).
    retain=False drops per-step records (evaluation-only mode, O(batch)
    memory); a later backprop_through_time then fails.
    """
    if paths.n_periods != horizon.N_rb:
        raise WealthSimError(
            f"path set has {paths.n_periods} periods, horizon expects {horizon.N_rb}"
        )
    if path_indices is None:
        gross = paths.gross_returns
    else:
        path_indices = np.asarray(path_indices)
        if path_indices.size and (
            path_indices.min() < 0 or path_indices.max() >= paths.n_paths
        ):
            raise WealthSimError("path_indices out of range")
        gross = paths.gross_returns[path_indices]
    batch = gross.shape[0]
    q = horizon.contributions
    times = horizon.rebalance_times()
    w = np.full(batch, horizon.w0)
    records: list[_StepRecord] | None = [] if retain else None
    for m in range(horizon.N_rb):
        w_plus = w + q[m]
        weights, cache = forward(net, times[m], w_plus)
        y_m = gross[:, m, :]
        growth = (weights * y_m).sum(axis=1)
        if records is not None:
            records.append(
                _StepRecord(
                    wealth_plus=w_plus,
                    weights=weights,
                    growth=growth,
                    returns=y_m,
                    cache=cache,
                )
            )
        w = w_plus * growth
    return WealthTrajectoryBatch(terminal_wealth=w, records=records, horizon=horizon)


def backprop_through_time(
    net: PolicyNetwork, batch: WealthTrajectoryBatch, d_terminal: np.ndarray
) -> Gradient:
    """Gradient of d_terminal . terminal_wealth with respect to theta.

    Sums contributions over paths and rebalancing steps in a fixed
    order, so the result is deterministic for a given batch.
    """
    if batch.records is None:
        raise WealthSimError("forward pass not retained")
    d_terminal = np.asarray(d_terminal, dtype=float)
    if d_terminal.shape != batch.terminal_wealth.shape:
        raise WealthSimError("d_terminal shape does not match batch")
    lam = d_terminal
    grad = np.zeros_like(net.theta)
    for rec in reversed(batch.records):
        d_weights = (lam * rec.wealth_plus)[:, None] * rec.returns
        d_theta, d_wplus = backward(net, rec.cache, d_weights)
        grad += d_theta
        lam = lam * rec.growth + d_wplus
    if not np.all(np.isfinite(grad)):
        raise WealthSimError("non-finite gradient")
    return grad


def terminal_wealth_csv(terminal_wealth: np.ndarray, path: str) -> None:
    """One terminal wealth value per line, 12 significant digits."""
    with open(path, "w") as fh:
        for w in np.asarray(terminal_wealth, dtype=float):
            fh.write(f"{w:.12g}\n")
