"""Objective family on terminal wealth: values and exact cotangents.

All five objectives are stored in minimization convention; reports
negate where a supremum is the natural reading. Sample statistics use
plain 1/n averages (population normalization). The mean-coupled kinds
(MV, MSemiV) differentiate through the batch mean, so cotangents are a
two-phase computation: reduce the mean first, then map per-path terms.

The CVaR objective (MCV) carries an auxiliary scalar xi that the
trainer optimizes jointly with the network parameters; its value
approximates the tail quantile at the optimum. The max(x, 0) inside is
replaced by a C^1 quadratic-blend `smooth_max` so gradients exist.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np


class ObjectiveError(ValueError):
    pass


class ObjectiveKind(str, Enum):
    DSQ = "DSQ"  # E[(W - gamma)^2]
    OSQ = "OSQ"  # E[min(W - gamma, 0)^2 - eps W]
    MV = "MV"  # -(E[W] - rho Var[W])
    MCV = "MCV"  # -(rho E[W] + CVaR_alpha[W]), via xi and smoothing
    MSEMIV = "MSemiV"  # -(E[W] - rho E[min(W - E[W], 0)^2])


@dataclass(frozen=True)
class ObjectiveSpec:
    """Objective kind plus its parameters.

    gamma: wealth target (DSQ/OSQ). rho: scalarization (MV/MCV/MSemiV).
    alpha: tail level (MCV). epsilon: small linear regularizer that
    breaks OSQ's gradient plateau above the target. lambda_smooth: width
    of the smoothed max for MCV; 0 disables smoothing (exact max), used
    by evaluation-only paths and oracles.
    """

    kind: ObjectiveKind
    gamma: float = 0.0
    rho: float = 0.0
    alpha: float = 0.05
    epsilon: float = 1e-6
    lambda_smooth: float = 1e-3

    def __post_init__(self) -> None:
        kind = ObjectiveKind(self.kind)
        object.__setattr__(self, "kind", kind)
        if kind in (ObjectiveKind.DSQ, ObjectiveKind.OSQ) and not self.gamma > 0:
            raise ObjectiveError(f"{kind.value}: gamma must be > 0")
        if kind in (ObjectiveKind.MV, ObjectiveKind.MCV, ObjectiveKind.MSEMIV):
            if not self.rho > 0:
                raise ObjectiveError(f"{kind.value}: rho must be > 0")
        if kind is ObjectiveKind.MCV:
            if not 0.0 < self.alpha < 1.0:
                raise ObjectiveError("MCV: alpha must be in (0, 1)")
            if self.lambda_smooth < 0:
                raise ObjectiveError("MCV: lambda_smooth must be >= 0")
        if self.epsilon < 0:
            raise ObjectiveError("epsilon must be >= 0")

    @property
    def has_xi(self) -> bool:
        return self.kind is ObjectiveKind.MCV


@dataclass(frozen=True)
class ObjectiveValue:
    value: float  # minimization convention
    mean_WT: float
    auxiliary: float | None = None  # current xi for MCV


def smooth_max(x, lam: float):
    """C^1 approximation of max(x, 0) with uniform error lam/4.

    x above lam: x; |x| <= lam: x^2/(4 lam) + x/2 + lam/4; below -lam: 0.
    """
    if not lam > 0:
        raise ObjectiveError("lambda must be > 0")
    x = np.asarray(x, dtype=float)
    mid = x * x / (4.0 * lam) + 0.5 * x + 0.25 * lam
    out = np.where(x > lam, x, np.where(x < -lam, 0.0, mid))
    return float(out) if out.ndim == 0 else out


def smooth_max_deriv(x, lam: float):
    if not lam > 0:
        raise ObjectiveError("lambda must be > 0")
    x = np.asarray(x, dtype=float)
    mid = x / (2.0 * lam) + 0.5
    out = np.where(x > lam, 1.0, np.where(x < -lam, 0.0, mid))
    return float(out) if out.ndim == 0 else out


def _positive_part(x: np.ndarray, lam: float) -> np.ndarray:
    return smooth_max(x, lam) if lam > 0 else np.maximum(x, 0.0)


def _positive_part_deriv(x: np.ndarray, lam: float) -> np.ndarray:
    return smooth_max_deriv(x, lam) if lam > 0 else (x > 0).astype(float)


def _check_batch(terminal_wealth) -> np.ndarray:
    w = np.asarray(terminal_wealth, dtype=float)
    if w.ndim != 1 or w.size == 0:
        raise ObjectiveError("no paths")
    return w


def evaluate(
    spec: ObjectiveSpec, terminal_wealth, w0: float, xi: float = 0.0
) -> ObjectiveValue:
    """Sample-average objective value on a batch of terminal wealths.

    w0 is accepted for interface uniformity across kinds; the value
    depends only on the terminal wealths (and xi for MCV).
    """
    w = _check_batch(terminal_wealth)
    mean = float(w.mean())
    k = spec.kind
    if k is ObjectiveKind.DSQ:
        value = float(np.mean((w - spec.gamma) ** 2))
        return ObjectiveValue(value, mean)
    if k is ObjectiveKind.OSQ:
        short = np.minimum(w - spec.gamma, 0.0)
        value = float(np.mean(short**2 - spec.epsilon * w))
        return ObjectiveValue(value, mean)
    if k is ObjectiveKind.MV:
        var = float(np.mean((w - mean) ** 2))
        return ObjectiveValue(-(mean - spec.rho * var), mean)
    if k is ObjectiveKind.MSEMIV:
        semi = float(np.mean(np.minimum(w - mean, 0.0) ** 2))
        return ObjectiveValue(-(mean - spec.rho * semi), mean)
    # MCV
    tail = _positive_part(xi - w, spec.lambda_smooth)
    value = float(np.mean(-spec.rho * w - xi + tail / spec.alpha))
    return ObjectiveValue(value, mean, auxiliary=float(xi))


def cotangents(
    spec: ObjectiveSpec, terminal_wealth, xi: float = 0.0
) -> tuple[np.ndarray, float]:
    """Exact per-path dJ/dW and dJ/dxi for the batch estimator.

    The MV/MSemiV terms include the coupling through the batch mean
    (dmean/dW_j = 1/n in every term); for MV the coupling cancels
    identically, for MSemiV it survives as the mean shortfall term.
    """
    w = _check_batch(terminal_wealth)
    n = w.size
    k = spec.kind
    if k is ObjectiveKind.DSQ:
        return 2.0 * (w - spec.gamma) / n, 0.0
    if k is ObjectiveKind.OSQ:
        short = np.minimum(w - spec.gamma, 0.0)
        return (2.0 * short - spec.epsilon) / n, 0.0
    if k is ObjectiveKind.MV:
        mean = w.mean()
        return (-1.0 + 2.0 * spec.rho * (w - mean)) / n, 0.0
    if k is ObjectiveKind.MSEMIV:
        mean = w.mean()
        short = np.minimum(w - mean, 0.0)
        return (-1.0 + 2.0 * spec.rho * (short - short.mean())) / n, 0.0
    # MCV
    psi_prime = _positive_part_deriv(xi - w, spec.lambda_smooth)
    d_w = (-spec.rho - psi_prime / spec.alpha) / n
    d_xi = -1.0 + float(psi_prime.mean()) / spec.alpha
    return d_w, d_xi


def empirical_cvar(terminal_wealth, alpha: float) -> tuple[float, float]:
    """(cvar, var) of the lower tail at level alpha.

    var is the ceil(alpha n)-th smallest outcome; cvar is the mean of
    the ceil(alpha n) smallest (the expected value of the worst alpha
    fraction; larger is better).
    """
    w = _check_batch(terminal_wealth)
    if not 0.0 < alpha < 1.0:
        raise ObjectiveError("alpha must be in (0, 1)")
    n = w.size
    k = int(np.ceil(alpha * n))
    tail = np.sort(np.partition(w, k - 1)[:k])
    return float(tail.mean()), float(tail[-1])


def mean_cvar_report(terminal_wealth, rho: float, alpha: float) -> dict:
    """Reporting form of the CVaR objective: rho * mean + CVaR_alpha."""
    w = _check_batch(terminal_wealth)
    cvar, var = empirical_cvar(w, alpha)
    mean = float(w.mean())
    return {
        "mean": mean,
        "cvar": cvar,
        "var": var,
        "value_function": rho * mean + cvar,
    }
