"""Additive smooth-transition regression and VAR with conjugate backfitting MCMC."""

__version__ = "0.1.0"

from .core import (  # noqa: E402
    BaseLearnerParams,
    ConfigError,
    DataError,
    DrawFileError,
    ModelConfig,
    NumericalError,
    Posterior,
    PosteriorDraw,
    TimeSeriesPanel,
    VastError,
    parameter_count,
)
from .data import DgpSpec, read_panel, simulate_dgp  # noqa: E402
from .predict import (  # noqa: E402
    PredictiveDraws,
    lpl_gaussian,
    lpl_joint,
    monte_carlo_study,
    predict_ast,
    recursive_forecast,
    rmse,
    simulate_predictive,
)
from .sampler import ChainSettings, run_chain_ast, run_chain_vast, variable_relevance  # noqa: E402
from .structural import GirfSpec, VariableOrdering, girf, ordering_from_classes  # noqa: E402

__all__ = [
    "BaseLearnerParams", "ChainSettings", "ConfigError", "DataError", "DgpSpec", "DrawFileError", "GirfSpec",
    "ModelConfig", "NumericalError", "Posterior", "PosteriorDraw", "PredictiveDraws", "TimeSeriesPanel",
    "VariableOrdering", "VastError", "girf", "lpl_gaussian", "lpl_joint", "monte_carlo_study",
    "ordering_from_classes", "parameter_count", "predict_ast", "read_panel", "recursive_forecast", "rmse",
    "run_chain_ast", "run_chain_vast", "simulate_dgp", "simulate_predictive", "variable_relevance",
]
