# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops.

Every routine here has a twin in ``_pykernels`` with identical floating-point
operation order; ``kernels`` picks one at import time.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport fabs

cnp.import_array()


def scan_scalar(double[:, ::1] coef, double[:, ::1] offs, double[::1] x0):
    """out[i, k] = coef[i, k] * out[i-1, k] + offs[i, k], with out[-1] = x0."""
    cdef Py_ssize_t n = coef.shape[0], r = coef.shape[1], i, k
    out_arr = np.empty((n, r), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef double[::1] x = np.array(x0, dtype=np.float64)
    with nogil:
        for i in range(n):
            for k in range(r):
                x[k] = coef[i, k] * x[k] + offs[i, k]
                out[i, k] = x[k]
    return out_arr


def scan_matrix(double[:, ::1] A, double[:, :, ::1] offs, double[:, ::1] x0):
    """out[i, k] = A @ out[i-1, k] + offs[i, k] (row-major accumulation)."""
    cdef Py_ssize_t n = offs.shape[0], r = offs.shape[1], d = offs.shape[2]
    cdef Py_ssize_t i, k, a, b
    cdef double acc
    out_arr = np.empty((n, r, d), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    cdef double[:, ::1] x = np.array(x0, dtype=np.float64)
    cdef double[::1] tmp = np.empty(d, dtype=np.float64)
    with nogil:
        for i in range(n):
            for k in range(r):
                for a in range(d):
                    acc = 0.0
                    for b in range(d):
                        acc = acc + A[a, b] * x[k, b]
                    tmp[a] = acc + offs[i, k, a]
                for a in range(d):
                    x[k, a] = tmp[a]
                    out[i, k, a] = tmp[a]
    return out_arr


cdef double _best
cdef int _m, _g


cdef void _dfs(int level, double partial, double[:, ::1] dist, double[::1] c,
               double[::1] vals, double[::1] tail, int[::1] choice) noexcept nogil:
    global _best
    cdef int j, i
    cdef double v
    cdef bint ok
    if level == _m:
        if partial > _best:
            _best = partial
        return
    if partial + tail[level] <= _best:
        return
    for j in range(_g):
        v = vals[j]
        ok = True
        for i in range(level):
            if fabs(v - vals[choice[i]]) > dist[level, i] + 1e-12:
                ok = False
                break
        if ok:
            choice[level] = j
            _dfs(level + 1, partial + c[level] * v, dist, c, vals, tail, choice)


def grid_search(double[:, ::1] dist, double[::1] c, double[::1] vals):
    """Maximize sum c_i f_i over f_i in vals with |f_i - f_j| <= dist[i, j]."""
    global _best, _m, _g
    _m = c.shape[0]
    _g = vals.shape[0]
    tail_arr = np.zeros(_m + 1)
    for i in range(_m - 1, -1, -1):
        tail_arr[i] = tail_arr[i + 1] + abs(c[i]) * max(abs(vals[0]), abs(vals[_g - 1]))
    cdef double[::1] tail = tail_arr
    cdef int[::1] choice = np.zeros(max(_m, 1), dtype=np.intc)
    _best = -1e300
    with nogil:
        _dfs(0, 0.0, dist, c, vals, tail, choice)
    return _best
