"""Generalized liquid association analysis via sparse Tucker decomposition."""

from .estimator import (
    Dataset,
    GlaaConfig,
    GlaaFit,
    center,
    fit,
    gla_tensor,
    initialize,
    iterate_step,
    reconstruct,
    sample_delta,
    theoretical_thresholds,
)
from .tuning import TuningGrid, TuningResult, tune, tuned_fit

__all__ = [
    "Dataset",
    "GlaaConfig",
    "GlaaFit",
    "TuningGrid",
    "TuningResult",
    "center",
    "fit",
    "gla_tensor",
    "initialize",
    "iterate_step",
    "reconstruct",
    "sample_delta",
    "theoretical_thresholds",
    "tune",
    "tuned_fit",
]

__version__ = "0.1.0"
