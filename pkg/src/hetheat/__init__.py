"""Numerical laboratory for the stochastic heat equation in a two-media medium."""
from .kernel import Medium, PiecewiseKernel, make_medium

__version__ = "0.1.0"

__all__ = ["Medium", "PiecewiseKernel", "make_medium", "__version__"]
