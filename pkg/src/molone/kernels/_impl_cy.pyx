# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled kernel kernels: cross-covariances and mean-gradient contractions.

Semantics match molone.kernels._impl_np exactly; the loops are fused to
avoid the large (n1, n2, d) temporaries the NumPy path allocates.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, sqrt

cnp.import_array()

MATERN52 = 0
SQEXP = 1

cdef double SQRT5 = sqrt(5.0)


def cross(int kind, double[:, ::1] x1, double[:, ::1] x2, double[::1] ls, double s2):
    cdef Py_ssize_t n1 = x1.shape[0]
    cdef Py_ssize_t n2 = x2.shape[0]
    cdef Py_ssize_t d = x1.shape[1]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] out = np.empty((n1, n2))
    cdef double[:, ::1] k = out
    cdef Py_ssize_t i, j, m
    cdef double r2, r, t

    for i in range(n1):
        for j in range(n2):
            r2 = 0.0
            for m in range(d):
                t = (x1[i, m] - x2[j, m]) / ls[m]
                r2 += t * t
            if kind == SQEXP:
                k[i, j] = s2 * exp(-0.5 * r2)
            else:
                r = sqrt(r2)
                k[i, j] = s2 * (1.0 + SQRT5 * r + (5.0 / 3.0) * r2) * exp(-SQRT5 * r)
    return out


def grad_mean(int kind, double[:, ::1] xq, double[:, ::1] xtr, double[::1] ls,
              double s2, double[::1] alpha):
    cdef Py_ssize_t nq = xq.shape[0]
    cdef Py_ssize_t nt = xtr.shape[0]
    cdef Py_ssize_t d = xq.shape[1]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] out = np.zeros((nq, d))
    cdef double[:, ::1] g = out
    cdef Py_ssize_t i, j, m
    cdef double r2, r, b, t, w

    for i in range(nq):
        for j in range(nt):
            r2 = 0.0
            for m in range(d):
                t = (xq[i, m] - xtr[j, m]) / ls[m]
                r2 += t * t
            if kind == SQEXP:
                b = -s2 * exp(-0.5 * r2)
            else:
                r = sqrt(r2)
                b = -(5.0 / 3.0) * s2 * (1.0 + SQRT5 * r) * exp(-SQRT5 * r)
            w = b * alpha[j]
            for m in range(d):
                g[i, m] += w * (xq[i, m] - xtr[j, m]) / (ls[m] * ls[m])
    return out
