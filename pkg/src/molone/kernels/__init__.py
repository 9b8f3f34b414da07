"""Kernel computation backend.

The compiled Cython extension is preferred when it imported cleanly; the
NumPy implementation is the fallback and the behavioral reference.  Set
MOLONE_PURE_PYTHON=1 to force the fallback (used by the backend benchmark
and by tests that must exercise both paths).
"""

from __future__ import annotations

import os

import numpy as np

from . import _impl_np

MATERN52 = _impl_np.MATERN52
SQEXP = _impl_np.SQEXP

KIND_CODES = {"matern52": MATERN52, "sqexp": SQEXP}

if os.environ.get("MOLONE_PURE_PYTHON"):
    _impl = _impl_np
    BACKEND = "numpy"
else:
    try:
        from . import _impl_cy as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        _impl = _impl_np
        BACKEND = "numpy"


def backend_name() -> str:
    return BACKEND


def _as_c(a: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(a, dtype=np.float64)


def cross(kind: str, x1: np.ndarray, x2: np.ndarray, ls: np.ndarray, s2: float) -> np.ndarray:
    """Covariance matrix k(x1, x2), shape (len(x1), len(x2))."""
    return _impl.cross(KIND_CODES[kind], _as_c(x1), _as_c(x2), _as_c(ls), float(s2))


def grad_mean(
    kind: str,
    xq: np.ndarray,
    xtr: np.ndarray,
    ls: np.ndarray,
    s2: float,
    alpha: np.ndarray,
) -> np.ndarray:
    """Gradient w.r.t. the query rows of sum_i alpha_i k(x, x_i), shape (nq, d)."""
    return _impl.grad_mean(
        KIND_CODES[kind], _as_c(xq), _as_c(xtr), _as_c(ls), float(s2), _as_c(alpha)
    )
