"""Pure-NumPy kernel kernels: cross-covariances and mean-gradient contractions.

Mirrors the API of the compiled extension; used as the fallback backend and
as the reference implementation in tests.
"""

from __future__ import annotations

import numpy as np

MATERN52 = 0
SQEXP = 1

_SQRT5 = np.sqrt(5.0)


def cross(kind: int, x1: np.ndarray, x2: np.ndarray, ls: np.ndarray, s2: float) -> np.ndarray:
    """Covariance matrix k(x1, x2) with ARD lengthscales and signal variance s2."""
    diff = (x1[:, None, :] - x2[None, :, :]) / ls
    r2 = np.einsum("ijk,ijk->ij", diff, diff)
    if kind == SQEXP:
        return s2 * np.exp(-0.5 * r2)
    r = np.sqrt(np.maximum(r2, 0.0))
    return s2 * (1.0 + _SQRT5 * r + (5.0 / 3.0) * r2) * np.exp(-_SQRT5 * r)


def grad_mean(
    kind: int,
    xq: np.ndarray,
    xtr: np.ndarray,
    ls: np.ndarray,
    s2: float,
    alpha: np.ndarray,
) -> np.ndarray:
    """Gradient of sum_i alpha_i * k(x, x_i) with respect to x, per query row.

    Returns an (n_query, d) array.  Both kernel families have the form
    dk/dx_j = B(r) * (x_j - xi_j) / ls_j^2 with a radial prefactor B, so the
    contraction is a single einsum over training points.
    """
    diff = xq[:, None, :] - xtr[None, :, :]
    scaled = diff / ls
    r2 = np.einsum("ijk,ijk->ij", scaled, scaled)
    if kind == SQEXP:
        b = -s2 * np.exp(-0.5 * r2)
    else:
        r = np.sqrt(np.maximum(r2, 0.0))
        b = -(5.0 / 3.0) * s2 * (1.0 + _SQRT5 * r) * np.exp(-_SQRT5 * r)
    w = b * alpha[None, :]
    return np.einsum("ij,ijk->ik", w, diff / (ls * ls))
