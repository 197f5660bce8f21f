# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled candidate-fitting kernel; see invmatch.kernels for the contract."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt
from libc.stdlib cimport malloc, free

cnp.import_array()


cdef int _chol_solve(double* A, double* b, double* x, Py_ssize_t s, double tol) noexcept nogil:
    """In-place Cholesky of the s x s row-major A, then solve A x = b.

    Returns 0 on success, 1 if a pivot falls below tol times the largest diagonal.
    """
    cdef Py_ssize_t i, j, p
    cdef double acc, dmax = 0.0
    for i in range(s):
        if A[i * s + i] > dmax:
            dmax = A[i * s + i]
    if dmax <= 0.0:
        return 1
    for j in range(s):
        acc = A[j * s + j]
        for p in range(j):
            acc -= A[j * s + p] * A[j * s + p]
        if acc <= tol * dmax:
            return 1
        acc = sqrt(acc)
        A[j * s + j] = acc
        for i in range(j + 1, s):
            for p in range(j):
                A[i * s + j] -= A[i * s + p] * A[j * s + p]
            A[i * s + j] /= acc
    for i in range(s):
        acc = b[i]
        for p in range(i):
            acc -= A[i * s + p] * x[p]
        x[i] = acc / A[i * s + i]
    for i in range(s - 1, -1, -1):
        acc = x[i]
        for p in range(i + 1, s):
            acc -= A[p * s + i] * x[p]
        x[i] = acc / A[i * s + i]
    return 0


def fit_candidates(
    const double[:, :, ::1] grams,
    const double[:, ::1] xtys,
    const double[:, ::1] ginv,
    const double[::1] theta,
    double rss_x,
    const cnp.int64_t[::1] ks,
    const cnp.int64_t[:, ::1] subsets,
    const cnp.int64_t[::1] sizes,
    double collinear_tol,
    double chol_tol,
):
    cdef Py_ssize_t p = grams.shape[0]
    cdef Py_ssize_t d = grams.shape[1]
    cdef Py_ssize_t m = ks.shape[0]
    cdef Py_ssize_t c, u, i, j, s, k
    cdef double ff, fy, rff, rfy, lam, gg, gt, hv, acc

    betas_arr = np.zeros((m, d + 1))
    rss_arr = np.zeros(m)
    flags_arr = np.zeros(m, dtype=np.int8)
    cdef double[:, ::1] betas = betas_arr
    cdef double[::1] rss = rss_arr
    cdef signed char[::1] flags = flags_arr

    cdef double* A = <double*> malloc(d * d * sizeof(double))
    cdef double* b = <double*> malloc(d * sizeof(double))
    cdef double* x = <double*> malloc(d * sizeof(double))
    cdef double* h = <double*> malloc(d * sizeof(double))
    cdef double* g = <double*> malloc(d * sizeof(double))
    if A == NULL or b == NULL or x == NULL or h == NULL or g == NULL:
        free(A); free(b); free(x); free(h); free(g)
        raise MemoryError()
    try:
        with nogil:
            for c in range(m):
                k = ks[c]
                s = sizes[c]
                ff = 0.0
                fy = 0.0
                for j in range(d):
                    h[j] = 0.0
                for u in range(p):
                    for i in range(s):
                        b[i] = grams[u, subsets[c, i], k]
                        for j in range(s):
                            A[i * s + j] = grams[u, subsets[c, i], subsets[c, j]]
                    if _chol_solve(A, b, x, s, chol_tol):
                        flags[c] = 1
                        break
                    for i in range(s):
                        ff += x[i] * b[i]
                        fy += x[i] * xtys[u, subsets[c, i]]
                    for j in range(d):
                        acc = 0.0
                        for i in range(s):
                            acc += grams[u, j, subsets[c, i]] * x[i]
                        h[j] += acc
                if flags[c]:
                    continue
                rfy = fy
                gg = 0.0
                gt = 0.0
                hv = 0.0
                for i in range(d):
                    acc = 0.0
                    for j in range(d):
                        acc += ginv[i, j] * h[j]
                    g[i] = acc
                    hv += h[i] * acc
                    gg += acc * acc
                    gt += acc * theta[i]
                    rfy -= theta[i] * h[i]
                rff = ff - hv
                if rff > collinear_tol * ff:
                    lam = rfy / rff
                    rss[c] = rss_x - rfy * rfy / rff
                else:
                    lam = gt / (1.0 + gg)
                    rss[c] = rss_x
                if rss[c] < 0.0:
                    rss[c] = 0.0
                betas[c, 0] = lam
                for i in range(d):
                    betas[c, i + 1] = theta[i] - lam * g[i]
    finally:
        free(A); free(b); free(x); free(h); free(g)
    return betas_arr, rss_arr, flags_arr
