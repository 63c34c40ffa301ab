"""Quantile log-symmetric autoregressive conditional duration models."""

__version__ = "0.1.0"

from .lsdist import Family, GeneratorSpec, QlsDistribution, StandardSymmetric
from .acd import AcdModelSpec, AcdParams, Link
from .estimate import FitOptions, FittedModel, fit, profile_fit, q_grid_scan

__all__ = [
    "__version__",
    "Family",
    "GeneratorSpec",
    "QlsDistribution",
    "StandardSymmetric",
    "AcdModelSpec",
    "AcdParams",
    "Link",
    "FitOptions",
    "FittedModel",
    "fit",
    "profile_fit",
    "q_grid_scan",
]
