"""Quasi-random and local sampling.

Sobol initialization, Latin hypercube sampling, LHS inside a sphere (the
local explanation neighborhood) and the adaptive radius rule that sizes
that sphere from the spread of an exploratory sample.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.stats import qmc

from .errors import ContractError
from .rng import RngStream

MAX_SOBOL_DIM = 32


@dataclass(frozen=True)
class ExplanationSet:
    """Local sample cloud around a candidate design point."""

    center: np.ndarray
    radius: float
    points: np.ndarray  # (n, d), clipped to the unit cube


def sobol(n: int, d: int, rng: RngStream, scramble: bool = True) -> np.ndarray:
    """First ``n`` points of a (scrambled) d-dimensional Sobol sequence.

    The unscrambled base sequence skips the all-zeros origin point, so it
    starts at (0.5, ..., 0.5).
    """
    if n < 1 or d < 1:
        raise ContractError("sobol requires n >= 1 and d >= 1")
    if d > MAX_SOBOL_DIM:
        raise ContractError(f"sobol supports at most {MAX_SOBOL_DIM} dimensions")
    engine = qmc.Sobol(d=d, scramble=scramble, seed=rng.generator())
    if not scramble:
        engine.fast_forward(1)
    with warnings.catch_warnings():
        # Non-power-of-2 draw counts are deliberate (the protocol uses 20).
        warnings.simplefilter("ignore", UserWarning)
        return engine.random(n)


def lhs_unit_cube(n: int, d: int, rng: RngStream) -> np.ndarray:
    """Latin hypercube sample: one point per axis stratum in every dimension."""
    if n < 1 or d < 1:
        raise ContractError("lhs_unit_cube requires n >= 1 and d >= 1")
    gen = rng.generator()
    u = gen.uniform(size=(n, d))
    cells = np.empty((n, d))
    for j in range(d):
        cells[:, j] = gen.permutation(n)
    return (cells + u) / n


def lhs_sphere(
    center: np.ndarray, radius: float, n: int, rng: RngStream
) -> ExplanationSet:
    """Sample ``n`` points uniformly inside a ball of ``radius`` around ``center``.

    LHS points in the unit cube are recentered to [-1,1]^d and normalized to
    directions; each is scaled by radius * U^(1/d) so the ball volume is
    covered uniformly, translated to the center, and clipped to [0,1]^d.
    """
    center = np.asarray(center, dtype=float)
    if radius <= 0:
        raise ContractError("lhs_sphere requires radius > 0")
    if n < 2:
        raise ContractError("lhs_sphere requires n >= 2")
    d = center.shape[0]
    u = lhs_unit_cube(n, d, rng.child("dirs"))
    v = 2.0 * u - 1.0
    norms = np.linalg.norm(v, axis=1, keepdims=True)
    # An exactly-central LHS point has no direction; leave it on the center.
    dirs = np.where(norms > 1e-12, v / np.maximum(norms, 1e-300), 0.0)
    rho = radius * rng.child("radii").generator().uniform(size=(n, 1)) ** (1.0 / d)
    points = np.clip(center + rho * dirs, 0.0, 1.0)
    return ExplanationSet(center=center, radius=float(radius), points=points)


def adaptive_radius(
    center: np.ndarray,
    r0: float,
    n: int,
    rng: RngStream,
    r_min: float = 0.01,
) -> float:
    """Neighborhood radius adapted to the local spread.

    Draws an exploratory ball sample of default radius ``r0`` and returns the
    population standard deviation of the point-to-center distances, floored
    at ``r_min``.
    """
    if r0 <= 0:
        raise ContractError("adaptive_radius requires r0 > 0")
    explore = lhs_sphere(center, r0, n, rng.child("explore"))
    dist = np.linalg.norm(explore.points - np.asarray(center, dtype=float), axis=1)
    sigma = float(np.std(dist))  # population std: deterministic at n == 1
    return max(sigma, r_min)
