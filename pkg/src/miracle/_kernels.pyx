# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled kernels. Must stay numerically interchangeable with _kernels_py."""
import numpy as np
cimport numpy as cnp
from libc.math cimport INFINITY, expm1

cnp.import_array()


def masked_distances(const double[:, ::1] xq, const signed char[:, ::1] mq,
                     const double[:, ::1] xr, const signed char[:, ::1] mr):
    """Mean squared difference over coordinates observed in both rows.

    Pairs sharing no observed coordinate get +inf.
    """
    cdef Py_ssize_t nq = xq.shape[0], nr = xr.shape[0], d = xq.shape[1]
    cdef Py_ssize_t i, j, k
    cdef double acc, diff
    cdef int shared
    out = np.empty((nq, nr), dtype=np.float64)
    cdef double[:, ::1] o = out
    for i in range(nq):
        for j in range(nr):
            acc = 0.0
            shared = 0
            for k in range(d):
                if mq[i, k] and mr[j, k]:
                    diff = xq[i, k] - xr[j, k]
                    acc += diff * diff
                    shared += 1
            o[i, j] = acc / shared if shared else INFINITY
    return out


def elu_fused(z):
    """ELU (alpha=1) and its derivative in one pass over ``z``."""
    src = np.ascontiguousarray(z, dtype=np.float64)
    act = np.empty_like(src)
    grad = np.empty_like(src)
    cdef const double[::1] zf = src.reshape(-1)
    cdef double[::1] af = act.reshape(-1)
    cdef double[::1] gf = grad.reshape(-1)
    cdef Py_ssize_t i, n = zf.shape[0]
    cdef double v, em
    with nogil:
        for i in range(n):
            v = zf[i]
            if v > 0:
                af[i] = v
                gf[i] = 1.0
            else:
                em = expm1(v)
                af[i] = em
                gf[i] = em + 1.0
    return act, grad
