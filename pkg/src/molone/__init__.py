"""Preferential Bayesian optimization with comparative why/why-not explanations."""

__version__ = "0.1.0"

from .benchmarks import BenchmarkProblem, evaluate, get_problem, true_utility
from .rng import RngStream

__all__ = [
    "BenchmarkProblem",
    "RngStream",
    "evaluate",
    "get_problem",
    "true_utility",
    "__version__",
]
