"""Bifurcation and continuation of stationary multi-layer vortex patches."""

from vortexpatch.errors import (
    NestingError,
    ParameterError,
    PatchError,
    QuadratureError,
    SolverError,
)
from vortexpatch.fourier import FourierEvenSeries, FourierOddSeries, NormSpec

__version__ = "0.1.0"

__all__ = [
    "FourierEvenSeries",
    "FourierOddSeries",
    "NestingError",
    "NormSpec",
    "ParameterError",
    "PatchError",
    "QuadratureError",
    "SolverError",
    "__version__",
]
