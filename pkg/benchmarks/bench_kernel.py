"""Compiled vs numpy knapsack kernel on the bundled 6-service, 36-config profile.

    python benchmarks/bench_kernel.py [--repeats 20]

Times the raw grid DP and the full ``solve_dp`` for budgets up to 2 Gbps
at 1 Mbps granularity, and checks both kernels return identical tables.
"""

import argparse
import statistics
import time

import numpy as np

from turbo import _mckp_py, allocator
from turbo.allocator import AllocationProblem, _pack, solve_dp
from turbo.profiles import example_profiles
from turbo.utility import build_curves

try:
    from turbo import _mckp
except ImportError:
    _mckp = None


def _time(fn, repeats):
    samples = []
    for _ in range(repeats):
        t = time.perf_counter()
        fn()
        samples.append((time.perf_counter() - t) * 1000)
    return statistics.mean(samples), max(samples)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeats", type=int, default=20)
    ap.add_argument("--rtt-ms", type=float, default=20.0)
    args = ap.parse_args()

    curves = tuple(build_curves(example_profiles(), args.rtt_ms))
    kernels = {"python": _mckp_py.grid_dp}
    if _mckp is not None:
        kernels["compiled"] = _mckp.grid_dp
    else:
        print("compiled kernel not built; timing the numpy kernel only")

    print(f"{'budget':>7} {'kernel':>9} {'grid_dp mean':>13} {'solve_dp mean':>14} {'solve_dp max':>13}")
    for budget in (100, 500, 1000, 2000):
        p = AllocationProblem(curves, float(budget))
        w, g, _, starts = _pack(p)
        weights = np.ceil(w - 1e-9).astype(np.int64)
        tables = {}
        for name, kernel in kernels.items():
            tables[name] = kernel(weights, g, starts, budget)
            raw, _ = _time(lambda: kernel(weights, g, starts, budget), args.repeats)
            saved = allocator.grid_dp
            allocator.grid_dp = kernel
            try:
                mean, worst = _time(lambda: solve_dp(p), args.repeats)
            finally:
                allocator.grid_dp = saved
            print(f"{budget:>7} {name:>9} {raw:>10.3f} ms {mean:>11.3f} ms {worst:>10.3f} ms")
        if len(tables) == 2:
            (b1, c1), (b2, c2) = tables.values()
            assert np.array_equal(b1, b2) and np.array_equal(c1, c2), "kernels disagree"


if __name__ == "__main__":
    main()
