"""Compare the compiled and NumPy DOA pair-counting kernels.

    python benchmarks/bench_doa.py [--repeat 5]

Each case is a random response table (students x exercises of one concept,
about half unanswered) with continuous mastery values.
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from dualcd import kernels

CASES = [(50, 10), (200, 20), (500, 40), (1000, 40), (2000, 60)]


def make_case(n, m, seed=0):
    rng = np.random.default_rng(seed)
    r = rng.integers(0, 2, size=(n, m)).astype(np.int8)
    r[rng.random((n, m)) < 0.5] = -1
    return rng.random(n), r


def best_of(fn, args, repeat):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn(*args)
        times.append(time.perf_counter() - t)
    return min(times), out


def main(argv=None):
    p = argparse.ArgumentParser()
    p.add_argument("--repeat", type=int, default=5)
    args = p.parse_args(argv)
    if kernels.compiled is None:
        print("compiled kernel not built; only the NumPy fallback is available")
    print(f"{'students':>8} {'exercises':>9} {'numpy s':>10} {'cython s':>10} {'speedup':>8}")
    for n, m in CASES:
        case = make_case(n, m)
        t_np, h_np = best_of(kernels.fallback.doa_pair_histogram, case, args.repeat)
        if kernels.compiled is None:
            print(f"{n:>8} {m:>9} {t_np:>10.4f} {'-':>10} {'-':>8}")
            continue
        t_cy, h_cy = best_of(kernels.compiled.doa_pair_histogram, case, args.repeat)
        if not np.array_equal(h_np, h_cy):
            raise SystemExit(f"kernels disagree on case {(n, m)}")
        print(f"{n:>8} {m:>9} {t_np:>10.4f} {t_cy:>10.4f} {t_np / t_cy:>7.2f}x")


if __name__ == "__main__":
    main()
