"""Multi-objective benchmark functions adapted to scalar utilities.

Three standard test problems (DTLZ2, DTLZ4, ZDT1) on the unit hypercube
[0,1]^5, each paired with a ground-truth utility that sums a fixed subset
of the outputs.  These play the role of the unknown black-box function and
the decision-maker's latent valuation in simulated optimization runs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, DomainError

_DOMAIN_TOL = 0.0  # domain check is exact: [0, 1] inclusive


@dataclass(frozen=True)
class BenchmarkProblem:
    id: str
    input_dim: int
    output_dim: int
    alpha: float
    utility_dims: tuple[int, ...]


_PROBLEMS = {
    "dtlz2": BenchmarkProblem("dtlz2", 5, 4, 1.0, (0, 1, 2)),
    "dtlz4": BenchmarkProblem("dtlz4", 5, 4, 100.0, (0, 1, 2)),
    "zdt1": BenchmarkProblem("zdt1", 5, 2, 1.0, (0, 1)),
}


def get_problem(name: str) -> BenchmarkProblem:
    """Look up a benchmark by case-insensitive id."""
    key = name.strip().lower()
    if key not in _PROBLEMS:
        raise ContractError(
            f"unknown benchmark {name!r}; expected one of {sorted(_PROBLEMS)}"
        )
    return _PROBLEMS[key]


def _check_inputs(problem: BenchmarkProblem, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != problem.input_dim:
        raise ContractError(
            f"{problem.id} expects {problem.input_dim} input dims, got {x.shape[-1]}"
        )
    if np.any(x < -_DOMAIN_TOL) or np.any(x > 1.0 + _DOMAIN_TOL):
        raise DomainError(f"{problem.id} inputs must lie in [0, 1]")
    return x


def _dtlz(x: np.ndarray, alpha: float) -> np.ndarray:
    # Position variables are the first M-1 = 3 coordinates, distance
    # variables the rest; the exponent only skews the position variables.
    pos = x[:, :3] ** alpha
    g = np.sum((x[:, 3:] - 0.5) ** 2, axis=1)
    theta = pos * (np.pi / 2.0)
    c, s = np.cos(theta), np.sin(theta)
    scale = 1.0 + g
    f = np.empty((x.shape[0], 4))
    f[:, 0] = scale * c[:, 0] * c[:, 1] * c[:, 2]
    f[:, 1] = scale * c[:, 0] * c[:, 1] * s[:, 2]
    f[:, 2] = scale * c[:, 0] * s[:, 1]
    f[:, 3] = scale * s[:, 0]
    return f


def _zdt1(x: np.ndarray) -> np.ndarray:
    d = x.shape[1]
    f1 = x[:, 0]
    g = 1.0 + 9.0 * np.sum(x[:, 1:], axis=1) / (d - 1)
    f2 = g * (1.0 - np.sqrt(f1 / g))
    return np.column_stack([f1, f2])


def evaluate(problem: BenchmarkProblem, x: np.ndarray) -> np.ndarray:
    """Evaluate the black-box outputs at one point (d,) or a batch (n, d)."""
    x = _check_inputs(problem, x)
    single = x.ndim == 1
    xb = x[None, :] if single else x
    if problem.id in ("dtlz2", "dtlz4"):
        y = _dtlz(xb, problem.alpha)
    else:
        y = _zdt1(xb)
    return y[0] if single else y


def true_utility(problem: BenchmarkProblem, y: np.ndarray) -> float | np.ndarray:
    """Ground-truth utility: the sum of the outputs named by utility_dims."""
    y = np.asarray(y, dtype=float)
    if y.shape[-1] != problem.output_dim:
        raise ContractError(
            f"{problem.id} outcomes have {problem.output_dim} dims, got {y.shape[-1]}"
        )
    u = y[..., list(problem.utility_dims)].sum(axis=-1)
    return float(u) if u.ndim == 0 else u
