"""Verification-based recovery of sparse signals from sparse measurements."""

from __future__ import annotations

__version__ = "0.1.0"

from .analysis import (  # noqa: E402
    StateSnapshot,
    StoppingCriteria,
    ThresholdResult,
    classify_nodes,
    concentration_experiment,
    mc_density_evolution,
    oversampling_ratio,
    theorem2_predicted_set,
    threshold_search,
)
from .decoder import (  # noqa: E402
    AlgorithmKind,
    ComparisonPolicy,
    FalseVerificationConflict,
    RecoveryResult,
    recover,
)
from .ensembles import (  # noqa: E402
    ConfigurationError,
    GraphConfig,
    SensingGraph,
    SignalConfig,
    ValueMode,
    WeightMode,
    encode,
    sample_graph,
    sample_signal,
)
from .mp import recover_mp  # noqa: E402

__all__ = [
    "AlgorithmKind",
    "ComparisonPolicy",
    "ConfigurationError",
    "FalseVerificationConflict",
    "GraphConfig",
    "RecoveryResult",
    "SensingGraph",
    "SignalConfig",
    "StateSnapshot",
    "StoppingCriteria",
    "ThresholdResult",
    "ValueMode",
    "WeightMode",
    "classify_nodes",
    "concentration_experiment",
    "encode",
    "mc_density_evolution",
    "oversampling_ratio",
    "recover",
    "recover_mp",
    "sample_graph",
    "sample_signal",
    "theorem2_predicted_set",
    "threshold_search",
]
