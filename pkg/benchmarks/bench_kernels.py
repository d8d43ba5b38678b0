"""Time the compiled admission sweep against the pure-Python fallback.

    python3 benchmarks/bench_kernels.py [--sizes 100 1000 10000] [--repeat 5]

Both backends run the same greedy sweep over the same instances; the
accepted sets are checked to agree before timings are reported.
"""
import argparse
import statistics
import time

import numpy as np

from evcrp import kernels
from evcrp.gen import GenParams, generate_synthetic
from evcrp.greedy import greedy_order


def time_sweep(inst, order, backend, repeat):
    laps = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        accepted, _ = kernels.sweep(inst, order, backend=backend)
        laps.append(time.perf_counter() - t0)
    return statistics.median(laps), accepted


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--sizes", type=int, nargs="+", default=[100, 1000, 10000])
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)
    if kernels.BACKEND != "cython":
        print("compiled kernel not built; only the fallback is available")
        return 1
    print(f"{'users':>7} {'options':>8} {'python ms':>10} {'cython ms':>10} {'speedup':>8}")
    for n in args.sizes:
        inst = generate_synthetic(GenParams(num_users=n, seed=args.seed))
        order = greedy_order(inst)
        py, a = time_sweep(inst, order, "python", args.repeat)
        cy, b = time_sweep(inst, order, "cython", args.repeat)
        if not np.array_equal(a, b):
            raise SystemExit(f"backends disagree at {n} users")
        print(f"{n:>7} {len(order):>8} {py * 1e3:>10.2f} {cy * 1e3:>10.2f} {py / cy:>7.1f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
