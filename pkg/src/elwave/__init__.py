"""Fully discrete solver and convergence laboratory for a nonlinear
stochastic elastic wave equation with scalar multiplicative noise."""

__version__ = "0.1.0"

from .ensemble import (
    StudyConfig,
    StudyFailure,
    mms_study,
    noise_stats_study,
    single_run,
    spatial_convergence_study,
    temporal_convergence_study,
)
from .noise import NoiseConfig, sample_increments

__all__ = [
    "__version__",
    "NoiseConfig",
    "StudyConfig",
    "StudyFailure",
    "mms_study",
    "noise_stats_study",
    "sample_increments",
    "single_run",
    "spatial_convergence_study",
    "temporal_convergence_study",
]
