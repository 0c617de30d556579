"""Bayesian symbolic regression of polynomial ODEs."""

from ._core import (
    Config,
    DependencyError,
    NumericError,
    ValidationError,
    blr,
    count_params,
    expand,
    forward,
    generate,
    integrate,
    kde,
    read_coefficients,
    run_experiment,
    run_stage,
    silverman_bandwidth,
)

__all__ = [
    "Config",
    "DependencyError",
    "NumericError",
    "ValidationError",
    "blr",
    "count_params",
    "expand",
    "forward",
    "generate",
    "integrate",
    "kde",
    "read_coefficients",
    "run_experiment",
    "run_stage",
    "silverman_bandwidth",
]
