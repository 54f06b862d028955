"""Neural-network rebalancing policies for multi-period portfolios.

A single small feedforward network maps (t, wealth) to long-only
portfolio weights shared across all rebalancing dates; it is trained by
mini-batch Adam with tail iterate averaging directly on simulated
(jump-diffusion) or block-bootstrapped return paths, for quadratic
target, one-sided quadratic, mean-variance, mean-CVaR and
mean-semivariance objectives. Closed-form and oracle validators back
the whole pipeline.
"""

from .analytics import (
    ClosedFormDsqParams,
    DistributionSummary,
    dsq_closed_form_weight,
    embedding_gamma,
    simulate_closed_form_dsq,
    summarize,
)
from .market import (
    HistoricalReturns,
    KouAssetParams,
    MarketModel,
    ReturnPathSet,
    kou_jump_moments,
    load_path_set,
    load_returns_csv,
    save_path_set,
    simulate_paths,
    stationary_block_bootstrap,
    write_returns_csv,
)
from .objectives import (
    ObjectiveKind,
    ObjectiveSpec,
    ObjectiveValue,
    cotangents,
    empirical_cvar,
    evaluate,
    smooth_max,
)
from .policy import (
    Gradient,
    NetTopology,
    PolicyNetwork,
    backward,
    forward,
    init_parameters,
    load_policy,
    save_policy,
)
from .trainer import (
    AdamParams,
    AdamState,
    TrainConfig,
    TrainedPolicy,
    TrainingDivergedError,
    adam_step,
    full_objective,
    train,
)
from .wealth import (
    InvestmentHorizon,
    WealthTrajectoryBatch,
    backprop_through_time,
    roll_forward,
)

__version__ = "0.1.0"

__all__ = [
    "AdamParams",
    "AdamState",
    "ClosedFormDsqParams",
    "DistributionSummary",
    "Gradient",
    "HistoricalReturns",
    "InvestmentHorizon",
    "KouAssetParams",
    "MarketModel",
    "NetTopology",
    "ObjectiveKind",
    "ObjectiveSpec",
    "ObjectiveValue",
    "PolicyNetwork",
    "ReturnPathSet",
    "TrainConfig",
    "TrainedPolicy",
    "TrainingDivergedError",
    "WealthTrajectoryBatch",
    "adam_step",
    "backprop_through_time",
    "backward",
    "cotangents",
    "dsq_closed_form_weight",
    "embedding_gamma",
    "empirical_cvar",
    "evaluate",
    "forward",
    "full_objective",
    "init_parameters",
    "kou_jump_moments",
    "load_path_set",
    "load_policy",
    "load_returns_csv",
    "roll_forward",
    "save_path_set",
    "save_policy",
    "simulate_closed_form_dsq",
    "simulate_paths",
    "smooth_max",
    "stationary_block_bootstrap",
    "summarize",
    "train",
    "write_returns_csv",
]
