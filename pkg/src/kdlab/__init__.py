"""Simulation and bound-checking toolkit for distillation in linear Gaussian models."""

from .numcore import NumericError, ParameterError

__version__ = "0.1.0"

__all__ = ["NumericError", "ParameterError", "__version__"]
