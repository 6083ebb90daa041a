"""Robust state estimation with sparse bad data and dense noise.

Modules
-------
bounds
    Recovery guarantees for Gaussian measurement matrices.
decoder
    Mixed l1/l2 decoding of linear measurements, with KKT certificates.
powerflow
    AC power-flow measurement model, Jacobian and case files.
estimator
    Iterative linearized robust estimation for the nonlinear model.
experiments
    Seeded experiment harnesses writing CSV.
"""

from .errors import NotConvergedError, ParseError, RankDeficientError, RobustSEError, ValidationError

__version__ = "0.1.0"

__all__ = [
    "NotConvergedError",
    "ParseError",
    "RankDeficientError",
    "RobustSEError",
    "ValidationError",
]
