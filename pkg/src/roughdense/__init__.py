"""Rough differential equations driven by fractional Brownian motion: solvers,
Malliavin derivatives and Monte Carlo checks of density bounds."""

from .driver import EnhancedDriver, FbmSample, HurstParam, Regime, TimeGrid, levy_area, sample_fbm
from .fields import VectorFieldSystem, builtin_system
from .malliavin import Method, malliavin_matrix, propagate
from .solver import Scheme, SolverConfig, solve

__version__ = "0.1.0"

__all__ = [
    "EnhancedDriver",
    "FbmSample",
    "HurstParam",
    "Regime",
    "TimeGrid",
    "levy_area",
    "sample_fbm",
    "VectorFieldSystem",
    "builtin_system",
    "Method",
    "malliavin_matrix",
    "propagate",
    "Scheme",
    "SolverConfig",
    "solve",
]
