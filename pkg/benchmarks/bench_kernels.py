"""Timing comparison of the numba kernels against their numpy twins.

Runs each kernel on seeded random inputs at a few retrieval-shaped sizes
and prints median wall time plus the speedup.  Also asserts the two
paths return identical arrays, since that is the contract they claim.

Usage: python3 benchmarks/bench_kernels.py [--reps N]
Needs numba importable and UCH_NO_NUMBA unset; otherwise only the numpy
path exists and there is nothing to compare.
"""

import argparse
import statistics
import sys
import time

import numpy as np

from uch import kernels
from uch.encoder import pack_codes
from uch.model import sign_quantize

SIZES = [
    # (queries, database, bits)
    (500, 1500, 64),
    (500, 1500, 128),
    (1000, 5000, 64),
]


def median_time(fn, reps):
    times = []
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def bench(reps):
    rng = np.random.default_rng(0)
    rows = []
    for nq, ndb, bits in SIZES:
        pq = pack_codes(sign_quantize(rng.normal(size=(nq, bits))))
        pdb = pack_codes(sign_quantize(rng.normal(size=(ndb, bits))))
        rel = (rng.random((nq, ndb)) < 0.1).astype(np.uint8)

        fast_h = kernels._hamming_numba(pq, pdb, kernels._POPCOUNT8)  # warmup + jit
        slow_h = kernels._hamming_numpy(pq, pdb)
        assert np.array_equal(fast_h, slow_h), "hamming paths disagree"
        t_fast = median_time(
            lambda: kernels._hamming_numba(pq, pdb, kernels._POPCOUNT8), reps
        )
        t_slow = median_time(lambda: kernels._hamming_numpy(pq, pdb), reps)
        rows.append((f"hamming {nq}x{ndb} @{bits}b", t_fast, t_slow))

        fast_a = kernels._ap_numba(rel, ndb)  # warmup + jit
        slow_a = kernels._ap_numpy(rel, ndb)
        assert np.array_equal(fast_a, slow_a), "ap paths disagree"
        t_fast = median_time(lambda: kernels._ap_numba(rel, ndb), reps)
        t_slow = median_time(lambda: kernels._ap_numpy(rel, ndb), reps)
        rows.append((f"ap      {nq}x{ndb}", t_fast, t_slow))
    return rows


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--reps", type=int, default=5, help="timed repetitions (median)")
    args = ap.parse_args(argv)
    if not kernels.USE_NUMBA:
        print("numba path unavailable (UCH_NO_NUMBA set or numba missing); "
              "nothing to compare")
        return 1
    rows = bench(args.reps)
    width = max(len(r[0]) for r in rows)
    print(f"{'kernel':<{width}}  {'numba':>10}  {'numpy':>10}  {'speedup':>8}")
    for name, t_fast, t_slow in rows:
        print(f"{name:<{width}}  {t_fast * 1e3:>8.2f}ms  {t_slow * 1e3:>8.2f}ms  "
              f"{t_slow / t_fast:>7.1f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
