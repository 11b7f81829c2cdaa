"""Per-period bandwidth allocation across services.

Each service either stays on its on-vehicle model (zero bandwidth) or takes
exactly one step of its utility curve, paying that step's bandwidth. The
budget is shared; the objective is the sum of transformed accuracies. This is
a multiple-choice knapsack.

``solve_dp`` runs a grid DP (compiled when the extension is built, numpy
otherwise) with bandwidths rounded up to the grid, which is always feasible.
A second pass with bandwidths rounded down bounds the true optimum from above;
when the two disagree an exact Pareto-frontier search settles it, so the
returned utility is the exact optimum of the real-valued instance.
"""

from __future__ import annotations

import itertools
import logging
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .utility import ServiceUtilityCurve

log = logging.getLogger(__name__)

if os.environ.get("TURBO_PURE_PYTHON"):
    from ._mckp_py import grid_dp

    KERNEL = "python"
else:
    try:
        from ._mckp import grid_dp

        KERNEL = "compiled"
    except ImportError:  # extension not built
        from ._mckp_py import grid_dp

        KERNEL = "python"

UTIL_EPS = 1e-9
BRUTEFORCE_LIMIT = 10**7


class InstanceTooLarge(ValueError):
    pass


def _fits(total: float, budget: float) -> bool:
    return total <= budget * (1 + 1e-12) + 1e-12


@dataclass(frozen=True)
class AllocationProblem:
    curves: tuple[ServiceUtilityCurve, ...]
    total_bandwidth_mbps: float

    def __post_init__(self):
        object.__setattr__(self, "curves", tuple(self.curves))
        if self.total_bandwidth_mbps < 0:
            raise ValueError("budget must be non-negative")
        ids = [c.service_id for c in self.curves]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate service ids")

    @property
    def floor_utility(self) -> float:
        return sum(c.value(c.floor_accuracy) for c in self.curves)


@dataclass(frozen=True)
class Allocation:
    choices: dict[str, str | None]
    bandwidth_mbps: dict[str, float]
    total_utility: float

    @property
    def total_bandwidth_mbps(self) -> float:
        return sum(self.bandwidth_mbps.values())

    def to_json(self) -> dict:
        return {
            "choices": dict(self.choices),
            "bandwidth_mbps": dict(self.bandwidth_mbps),
            "total_bandwidth_mbps": self.total_bandwidth_mbps,
            "total_utility": self.total_utility,
        }


def local_allocation(p: AllocationProblem) -> Allocation:
    ids = [c.service_id for c in p.curves]
    return Allocation({s: None for s in ids}, {s: 0.0 for s in ids}, p.floor_utility)


def allocation_from_indices(p: AllocationProblem, picks) -> Allocation:
    """Build an Allocation from per-service step indices (0 = local, k = k-th step)."""
    choices, bw, total = {}, {}, 0.0
    for curve, k in zip(p.curves, picks):
        if k == 0:
            choices[curve.service_id] = None
            bw[curve.service_id] = 0.0
            total += curve.value(curve.floor_accuracy)
        else:
            step = curve.steps[k - 1]
            choices[curve.service_id] = step.config_id
            bw[curve.service_id] = step.b_c_mbps
            total += curve.value(step.accuracy)
    return Allocation(choices, bw, total)


def solve_bruteforce(p: AllocationProblem) -> Allocation:
    """Exhaustive reference solver.

    Ties go to the smaller total bandwidth, then to the lexicographically
    smaller vector of step indices.
    """
    sizes = [len(c.steps) + 1 for c in p.curves]
    if math.prod(sizes) > BRUTEFORCE_LIMIT:
        raise InstanceTooLarge(f"{math.prod(sizes)} combinations exceed {BRUTEFORCE_LIMIT}")
    options = []
    for curve in p.curves:
        opts = [(0.0, curve.value(curve.floor_accuracy))]
        opts += [(s.b_c_mbps, curve.value(s.accuracy)) for s in curve.steps]
        options.append(opts)
    best = None
    best_u = best_bw = 0.0
    for combo in itertools.product(*(range(n) for n in sizes)):
        bw = u = 0.0
        for opts, k in zip(options, combo):
            bw += opts[k][0]
            u += opts[k][1]
        if not _fits(bw, p.total_bandwidth_mbps):
            continue
        if (
            best is None
            or u > best_u + UTIL_EPS
            or (abs(u - best_u) <= UTIL_EPS and bw < best_bw - 1e-12)
        ):
            best, best_u, best_bw = combo, u, bw
    return allocation_from_indices(p, best)


def _pack(p: AllocationProblem):
    """Flatten positive-gain steps into the kernel's CSR layout."""
    bandwidths, gains, owners, starts = [], [], [], [0]
    for curve in p.curves:
        base = curve.value(curve.floor_accuracy)
        for k, step in enumerate(curve.steps, start=1):
            gain = curve.value(step.accuracy) - base
            if gain > 0:
                bandwidths.append(step.b_c_mbps)
                gains.append(gain)
                owners.append(k)
        starts.append(len(gains))
    return (
        np.asarray(bandwidths, dtype=np.float64),
        np.asarray(gains, dtype=np.float64),
        owners,
        np.asarray(starts, dtype=np.int64),
    )


def _grid_solve(weights, gains, starts, budget_buckets):
    best, choice = grid_dp(weights, gains, starts, budget_buckets)
    top = best[-1]
    # smallest bucket count reaching the optimum
    w = int(np.argmax(best >= top - 1e-12))
    picks = []
    for g in range(len(starts) - 2, -1, -1):
        i = int(choice[g, w])
        picks.append(i)
        if i >= 0:
            w -= int(weights[i])
    picks.reverse()
    return top, picks


def _frontier_solve(p: AllocationProblem) -> list[int]:
    """Exact search over Pareto-optimal (bandwidth, utility) partial solutions."""
    budget = p.total_bandwidth_mbps
    frontier = [(0.0, 0.0, ())]
    for curve in p.curves:
        base = curve.value(curve.floor_accuracy)
        opts = [(0.0, 0.0)] + [(s.b_c_mbps, curve.value(s.accuracy) - base) for s in curve.steps]
        cand = []
        for bw, u, picks in frontier:
            for k, (b, g) in enumerate(opts):
                if k and g <= 0:
                    continue
                nb = bw + b
                if _fits(nb, budget):
                    cand.append((nb, u + g, picks + (k,)))
        cand.sort(key=lambda t: (t[0], -t[1], t[2]))
        frontier = []
        top = -math.inf
        for item in cand:
            if item[1] > top + UTIL_EPS:
                frontier.append(item)
                top = item[1]
    best = max(frontier, key=lambda t: t[1])
    # among utility ties keep the cheapest (frontier is sorted by bandwidth)
    for item in frontier:
        if item[1] >= best[1] - UTIL_EPS:
            return list(item[2])
    return list(best[2])


def solve_dp(p: AllocationProblem, granularity_mbps: float = 1.0) -> Allocation:
    if granularity_mbps <= 0:
        raise ValueError("granularity must be positive")
    bandwidths, gains, owners, starts = _pack(p)
    if len(gains) == 0:
        return local_allocation(p)
    budget_buckets = int(math.floor(p.total_bandwidth_mbps / granularity_mbps + 1e-9))
    scaled = bandwidths / granularity_mbps
    up = np.ceil(scaled - 1e-9).astype(np.int64)
    lower_value, picks = _grid_solve(up, gains, starts, budget_buckets)

    down = np.floor(scaled + 1e-9).astype(np.int64)
    upper_value, _ = _grid_solve(down, gains, starts, budget_buckets)

    if upper_value > lower_value + UTIL_EPS:
        log.debug("grid rounding gap %.3g; refining exactly", upper_value - lower_value)
        return allocation_from_indices(p, _frontier_solve(p))

    indices = [0 if i < 0 else owners[i] for i in picks]
    return allocation_from_indices(p, indices)


def reevaluate(prev: Allocation, p: AllocationProblem) -> Allocation | None:
    """Price a previous allocation's choices under a new problem; None if infeasible."""
    choices, bw, total = {}, {}, 0.0
    for curve in p.curves:
        cid = prev.choices.get(curve.service_id)
        if cid is None:
            choices[curve.service_id] = None
            bw[curve.service_id] = 0.0
            total += curve.value(curve.floor_accuracy)
            continue
        step = next((s for s in curve.steps if s.config_id == cid), None)
        if step is None:
            return None
        choices[curve.service_id] = cid
        bw[curve.service_id] = step.b_c_mbps
        total += curve.value(step.accuracy)
    if not _fits(sum(bw.values()), p.total_bandwidth_mbps):
        return None
    return Allocation(choices, bw, total)


def realloc_decision(
    prev: Allocation | None,
    p: AllocationProblem,
    hysteresis: float = 0.0,
    granularity_mbps: float = 1.0,
) -> Allocation:
    if not 0.0 <= hysteresis < 1.0:
        raise ValueError("hysteresis must be in [0, 1)")
    fresh = solve_dp(p, granularity_mbps)
    if prev is None or hysteresis == 0.0:
        return fresh
    kept = reevaluate(prev, p)
    if kept is None:
        return fresh
    if fresh.total_utility - kept.total_utility < hysteresis * prev.total_utility:
        return kept
    return fresh
