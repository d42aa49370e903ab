"""Pilot-free maximum-likelihood detection for the multi-user block-fading uplink."""

from .detector import (
    DetectionResult,
    correlation_matrix,
    detect,
    match_permutation,
    recover_symbols,
)
from .harness import ExperimentConfig, ExperimentSummary, run_experiment, run_gradient_check, run_sweep
from .likelihood import (
    LAPLACIAN_UNIT,
    LogDensity,
    SingularUnmixingError,
    finite_difference_gradient,
    gradient_laplacian,
    log_likelihood_generic,
    log_likelihood_laplacian,
)
from .optimizer import OptimizerConfig, Trajectory, run_optimization
from .signal_model import (
    NOISELESS,
    ConfigError,
    ScenarioConfig,
    generate_channel,
    generate_scenario,
    generate_symbols,
    sample_laplacian,
    synthesize_received,
)

__version__ = "0.1.0"
