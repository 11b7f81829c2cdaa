"""Numpy implementation of the multiple-choice knapsack grid DP.

Used when the compiled ``_mckp`` extension is unavailable. Semantics match
the compiled kernel exactly, including tie handling.
"""

import numpy as np

EPS = 1e-12


def grid_dp(weights, values, group_start, budget):
    """Maximise total value picking at most one item per group.

    ``weights`` are integer bucket counts, ``values`` the gain of each item
    over its group's zero-cost default, ``group_start`` the CSR offsets of
    the groups. Returns ``(best, choice)``: ``best[w]`` is the optimum using
    at most ``w`` buckets, ``choice[g, w]`` the item taken by group ``g`` in
    that optimum (-1 for the default).
    """
    weights = np.asarray(weights, dtype=np.int64)
    values = np.asarray(values, dtype=np.float64)
    group_start = np.asarray(group_start, dtype=np.int64)
    n_groups = len(group_start) - 1
    width = budget + 1
    dp = np.zeros(width, dtype=np.float64)
    choice = np.full((n_groups, width), -1, dtype=np.int32)
    for g in range(n_groups):
        new = dp.copy()
        row = choice[g]
        for i in range(group_start[g], group_start[g + 1]):
            wt = weights[i]
            if wt > budget:
                continue
            cand = dp[: width - wt] + values[i]
            tail = new[wt:]
            better = cand > tail + EPS
            tail[better] = cand[better]
            row[wt:][better] = i
        dp = new
    return dp, choice
