"""Ground-truth validators and reporting.

The quadratic-target problem with one risk-free and one risky
jump-diffusion asset admits a closed-form unconstrained control: the
risky fraction is proportional to the gap between discounted target and
current wealth. `simulate_closed_form_dsq` applies that control on a
fine time grid (continuous-trading approximation) and is the external
yardstick the trained network is compared against.

`embedding_gamma` maps a mean-variance scalarization rho to the
quadratic target gamma = 1/(2 rho) + E[W*(T)] whose optimal control
coincides with the mean-variance one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .market import MarketModel, _corr_factor, _philox, _sample_gross_returns


class AnalyticsError(ValueError):
    pass


@dataclass(frozen=True)
class ClosedFormDsqParams:
    """Inputs to the closed-form quadratic-target control.

    r: risk-free drift; mu2/sigma2/lambda2: risky-asset drift, vol and
    jump intensity; kappa2_second: second jump moment E[(theta-1)^2];
    gamma: wealth target; T: horizon; w0: initial wealth. Requires
    w0 < gamma * exp(-r T) (target not reachable risk-free).
    """

    r: float
    mu2: float
    sigma2: float
    lambda2: float
    kappa2_second: float
    gamma: float
    T: float
    w0: float

    def __post_init__(self) -> None:
        if not self.sigma2**2 + self.lambda2 * self.kappa2_second > 0:
            raise AnalyticsError("risky asset must carry risk (sigma2^2 + lambda2 kappa2 > 0)")
        if not self.T > 0:
            raise AnalyticsError("T must be > 0")
        if not self.w0 > 0:
            raise AnalyticsError("w0 must be > 0")
        if not self.w0 < self.gamma * np.exp(-self.r * self.T):
            raise AnalyticsError("requires w0 < gamma * exp(-rT)")

    @property
    def merton_ratio(self) -> float:
        return (self.mu2 - self.r) / (self.sigma2**2 + self.lambda2 * self.kappa2_second)


def dsq_closed_form_weight(p: ClosedFormDsqParams, t: float, wealth: float) -> float:
    """Optimal unconstrained risky fraction at (t, wealth).

    p2* = (mu2 - r)/(sigma2^2 + lambda2 kappa2) * (gamma e^{-r(T-t)} - W)/W.
    The companion risk-free weight is 1 - p2*. No clipping: the
    analytical control may leave [0, 1].
    """
    if wealth <= 0:
        raise AnalyticsError("insolvent state outside closed-form domain")
    target = p.gamma * np.exp(-p.r * (p.T - t))
    return p.merton_ratio * (target - wealth) / wealth


def simulate_closed_form_dsq(
    p: ClosedFormDsqParams,
    model: MarketModel,
    n_paths: int,
    n_steps: int,
    seed: int,
) -> np.ndarray:
    """Terminal wealths under the analytical control on a fine grid.

    The model must hold exactly one risk-free and one risky asset. The
    control is applied in dollar-amount form A = merton_ratio *
    (gamma e^{-r(T-t)} - W), the continuous extension of p2* W through
    W <= 0: leverage, shorting and negative wealth are all allowed, as
    the unconstrained derivation requires. Wealth updates per step as
    W <- W * Y1 + A * (Y2 - Y1).
    """
    if model.n_assets != 2 or sum(model.risk_free_flags) != 1:
        raise AnalyticsError("model must hold exactly one risk-free and one risky asset")
    if n_steps < 1 or n_paths < 1:
        raise AnalyticsError("n_paths and n_steps must be >= 1")
    rf_index = model.risk_free_flags.index(True)
    risky_index = 1 - rf_index
    risky = model.assets[risky_index]
    dt = p.T / n_steps
    y_free = float(np.exp(model.assets[rf_index].mu * dt))
    factor = _corr_factor(model.brownian_corr)
    rng = _philox(seed, 0)
    w = np.full(n_paths, p.w0)
    for k in range(n_steps):
        target = p.gamma * np.exp(-p.r * (p.T - k * dt))
        amount = p.merton_ratio * (target - w)
        # Sample through the joint-market path so correlation structure
        # (if any) is preserved; only the risky column varies.
        y = _sample_gross_returns(rng, model, factor, n_paths, 1, dt)[:, 0, :]
        w = w * y_free + amount * (y[:, risky_index] - y_free)
    return w


def embedding_gamma(rho: float, mean_WT_star: float) -> float:
    """Quadratic target equivalent to a mean-variance scalarization.

    gamma = 1/(2 rho) + E[W*(T)] under the optimal policy's terminal
    mean; the two problems then share their optimal control.
    """
    if not rho > 0:
        raise AnalyticsError("invalid scalarization")
    return 1.0 / (2.0 * rho) + mean_WT_star


PERCENTILE_PROBES = (5, 20, 25, 50, 75, 80, 95)


@dataclass(frozen=True)
class DistributionSummary:
    mean: float
    stdev: float
    percentiles: dict[int, float]

    def as_row(self, label: str) -> dict:
        row = {"label": label, "mean": self.mean, "stdev": self.stdev}
        for q in PERCENTILE_PROBES:
            row[f"p{q}"] = self.percentiles[q]
        return row


def summarize(terminal_wealth) -> DistributionSummary:
    """Mean, population stdev, linear-interpolation percentiles."""
    w = np.asarray(terminal_wealth, dtype=float)
    if w.size == 0:
        raise AnalyticsError("empty sample")
    pct = np.percentile(w, PERCENTILE_PROBES, method="linear")
    return DistributionSummary(
        mean=float(w.mean()),
        stdev=float(w.std(ddof=0)),
        percentiles={q: float(v) for q, v in zip(PERCENTILE_PROBES, pct)},
    )


def summary_csv(rows: list[tuple[str, DistributionSummary]], path: str) -> None:
    """Table-layout CSV: label,mean,stdev,p5,p20,p25,p50,p75,p80,p95."""
    header = ["label", "mean", "stdev"] + [f"p{q}" for q in PERCENTILE_PROBES]
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for label, s in rows:
            cells = [label, f"{s.mean:.12g}", f"{s.stdev:.12g}"] + [
                f"{s.percentiles[q]:.12g}" for q in PERCENTILE_PROBES
            ]
            fh.write(",".join(cells) + "\n")


def summary_json_dict(s: DistributionSummary) -> dict:
    return {
        "mean": s.mean,
        "stdev": s.stdev,
        "percentiles": {str(q): s.percentiles[q] for q in PERCENTILE_PROBES},
    }
