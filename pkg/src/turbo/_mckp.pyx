# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled multiple-choice knapsack grid DP (see ``_mckp_py`` for the contract)."""

import numpy as np
cimport numpy as cnp

cnp.import_array()

cdef double EPS = 1e-12


def grid_dp(weights, values, group_start, Py_ssize_t budget):
    cdef cnp.int64_t[::1] wts = np.ascontiguousarray(weights, dtype=np.int64)
    cdef double[::1] vals = np.ascontiguousarray(values, dtype=np.float64)
    cdef cnp.int64_t[::1] starts = np.ascontiguousarray(group_start, dtype=np.int64)
    cdef Py_ssize_t n_groups = starts.shape[0] - 1
    cdef Py_ssize_t width = budget + 1
    dp_arr = np.zeros(width, dtype=np.float64)
    new_arr = np.empty(width, dtype=np.float64)
    choice_arr = np.full((n_groups, width), -1, dtype=np.int32)
    cdef double[::1] dp = dp_arr
    cdef double[::1] new = new_arr
    cdef int[:, ::1] choice = choice_arr
    cdef Py_ssize_t g, i, w, wt
    cdef double cand, best
    cdef int pick
    for g in range(n_groups):
        for w in range(width):
            best = dp[w]
            pick = -1
            for i in range(starts[g], starts[g + 1]):
                wt = wts[i]
                if wt > w:
                    continue
                cand = dp[w - wt] + vals[i]
                if cand > best + EPS:
                    best = cand
                    pick = <int>i
            new[w] = best
            choice[g, w] = pick
        dp, new = new, dp
    return np.asarray(dp).copy(), choice_arr
