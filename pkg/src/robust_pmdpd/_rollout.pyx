# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled rollout kernel; see ``_rollout_py`` for the reference semantics."""
import numpy as np
cimport numpy as cnp

cnp.import_array()


def rollout_returns(const long long[::1] s0, const long long[::1] a0, const long long[::1] s1,
                    Py_ssize_t horizon,
                    const double[:, ::1] pol_cdf, const double[:, :, ::1] ker_cdf,
                    const double[:, :, :, ::1] cost, const double[:, :, :, ::1] first_cost,
                    double gamma, const double[:, :, ::1] u):
    cdef Py_ssize_t n = s0.shape[0]
    cdef Py_ssize_t C = cost.shape[0]
    cdef Py_ssize_t A = pol_cdf.shape[1]
    cdef Py_ssize_t S = pol_cdf.shape[0]
    out = np.zeros((n, C), dtype=np.float64)
    cdef double[:, ::1] ret = out
    cdef Py_ssize_t i, l, k, s, a, nxt
    cdef double disc, uu
    with nogil:
        for i in range(n):
            s = s0[i]
            disc = 1.0
            for l in range(horizon):
                if l == 0 and a0[i] >= 0:
                    a = a0[i]
                else:
                    uu = u[i, l, 0]
                    a = 0
                    while a < A - 1 and pol_cdf[s, a] <= uu:
                        a += 1
                if l == 0 and s1[i] >= 0:
                    nxt = s1[i]
                else:
                    uu = u[i, l, 1]
                    nxt = 0
                    while nxt < S - 1 and ker_cdf[s, a, nxt] <= uu:
                        nxt += 1
                if l == 0:
                    for k in range(C):
                        ret[i, k] += disc * first_cost[k, s, a, nxt]
                else:
                    for k in range(C):
                        ret[i, k] += disc * cost[k, s, a, nxt]
                disc *= gamma
                s = nxt
    return out
