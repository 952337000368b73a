# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops. Must stay numerically identical to ``_pykernels``."""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt

cnp.import_array()


def operating_points(const double[::1] scores, const unsigned char[::1] is_target):
    """Tie-grouped FAR/FRR sweep over scores sorted in descending order.

    Returns ``(thresholds, far, frr)``, one entry per distinct score.
    """
    cdef Py_ssize_t n = scores.shape[0]
    cdef Py_ssize_t i, k = 0
    cdef long n_tar = 0, n_non = 0, acc_tar = 0, acc_non = 0
    for i in range(n):
        if is_target[i]:
            n_tar += 1
        else:
            n_non += 1
    thr_arr = np.empty(n, dtype=np.float64)
    far_arr = np.empty(n, dtype=np.float64)
    frr_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] thr = thr_arr
    cdef double[::1] far = far_arr
    cdef double[::1] frr = frr_arr
    cdef double dt = <double>n_tar
    cdef double dn = <double>n_non
    for i in range(n):
        if is_target[i]:
            acc_tar += 1
        else:
            acc_non += 1
        if i == n - 1 or scores[i + 1] != scores[i]:
            thr[k] = scores[i]
            far[k] = <double>acc_non / dn
            frr[k] = <double>(n_tar - acc_tar) / dt
            k += 1
    return thr_arr[:k], far_arr[:k], frr_arr[:k]


def paired_cosine(const double[:, ::1] a, const cnp.int64_t[::1] ia,
                  const double[:, ::1] b, const cnp.int64_t[::1] ib):
    """Cosine between ``a[ia[k]]`` and ``b[ib[k]]`` for every k."""
    cdef Py_ssize_t n = ia.shape[0]
    cdef Py_ssize_t d = a.shape[1]
    cdef Py_ssize_t k, j
    cdef double dot, na, nb, x, y, c
    out_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    for k in range(n):
        dot = 0.0
        na = 0.0
        nb = 0.0
        for j in range(d):
            x = a[ia[k], j]
            y = b[ib[k], j]
            dot += x * y
            na += x * x
            nb += y * y
        if na == 0.0 or nb == 0.0:
            raise ZeroDivisionError(f"zero vector in pair {k}")
        c = dot / sqrt(na * nb)
        if c > 1.0:
            c = 1.0
        elif c < -1.0:
            c = -1.0
        out[k] = c
    return out_arr
