# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels. Same contracts as ``moodkit._pykernels``."""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, fabs

cnp.import_array()

DEF HELLINGER = 0
DEF L1 = 1
DEF L2 = 2
DEF WASSERSTEIN = 3


cdef inline double _sign(double x) noexcept nogil:
    # branchless; the CDF differences flip sign unpredictably
    return <double>(x > 0) - <double>(x < 0)


cdef void _pair_row(const double[::1] p, const double[::1] q, double[::1] gp, double[::1] gq,
                    double w, int metric, double* out) noexcept nogil:
    cdef Py_ssize_t K = p.shape[0]
    cdef Py_ssize_t c
    cdef double s = 0.0, diff, d, coef, cp = 0.0, cq = 0.0, acc
    if metric == HELLINGER:
        for c in range(K):
            diff = sqrt(p[c]) - sqrt(q[c])
            s += diff * diff
        d = sqrt(0.5 * s)
        out[0] += w * d
        if d > 0:
            coef = 0.25 / d
            for c in range(K):
                diff = sqrt(p[c]) - sqrt(q[c])
                if p[c] > 0:
                    gp[c] += w * (coef * diff / sqrt(p[c]))
                if q[c] > 0:
                    gq[c] += w * (-coef * diff / sqrt(q[c]))
    elif metric == L1:
        for c in range(K):
            diff = p[c] - q[c]
            s += fabs(diff)
            gp[c] += w * _sign(diff)
            gq[c] += w * (-_sign(diff))
        out[0] += w * s
    elif metric == L2:
        for c in range(K):
            diff = p[c] - q[c]
            s += diff * diff
        d = sqrt(s)
        out[0] += w * d
        if d > 0:
            for c in range(K):
                diff = p[c] - q[c]
                gp[c] += w * (diff / d)
                gq[c] += w * (-diff / d)
    else:
        for c in range(K):
            cp += p[c]
            cq += q[c]
            s += fabs(cp - cq)
        out[0] += w * s
        # suffix sums of sign(CDF_p - CDF_q), walked from the end
        acc = 0.0
        for c in range(K - 1, -1, -1):
            acc += _sign(cp - cq)
            cp -= p[c]
            cq -= q[c]
            gp[c] += w * acc
            gq[c] += w * (-acc)


def pair_discrepancy(P, int metric):
    if metric < 0 or metric > 3:
        raise ValueError(f"unknown metric code {metric}")
    cdef double[:, :, ::1] Pv = np.ascontiguousarray(P, dtype=np.float64)
    cdef Py_ssize_t M = Pv.shape[0], n = Pv.shape[1], K = Pv.shape[2]
    dist_arr = np.zeros(n, dtype=np.float64)
    grad_arr = np.zeros((M, n, K), dtype=np.float64)
    cdef double[::1] dist = dist_arr
    cdef double[:, :, ::1] grad = grad_arr
    cdef double w = 2.0 / (M * (M - 1))
    cdef Py_ssize_t i, j, r
    with nogil:
        for i in range(M - 1):
            for j in range(i + 1, M):
                for r in range(n):
                    _pair_row(Pv[i, r], Pv[j, r], grad[i, r], grad[j, r], w, metric, &dist[r])
    return dist_arr, grad_arr


def auroc_sorted(id_sorted, ood_sorted):
    cdef double[::1] a = np.ascontiguousarray(id_sorted, dtype=np.float64)
    cdef double[::1] b = np.ascontiguousarray(ood_sorted, dtype=np.float64)
    cdef Py_ssize_t n = a.shape[0], m = b.shape[0]
    cdef Py_ssize_t lo = 0, hi = 0, k
    cdef long long greater = 0, ties = 0
    cdef double v
    with nogil:
        for k in range(m):
            v = b[k]
            while lo < n and a[lo] < v:
                lo += 1
            if hi < lo:
                hi = lo
            while hi < n and a[hi] <= v:
                hi += 1
            greater += n - hi
            ties += hi - lo
    return (2 * greater + ties) / (2.0 * n * m)
