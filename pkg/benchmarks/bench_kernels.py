"""Time the numba kernels against their numpy twins.

    python benchmarks/bench_kernels.py [--repeat 5]

Both backends are called directly (the env flag only picks the default), so
one process compares them.  The first numba call is reported separately as
compile time.
"""
import argparse
import time

import numpy as np

from poisonmi import kernels
from poisonmi._accel import HAS_NUMBA


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if not HAS_NUMBA:
        print("numba unavailable or disabled; nothing to compare")
        return

    rng = np.random.default_rng(0)
    seeds = rng.integers(0, 2**63, size=4096, dtype=np.uint64)
    rows = rng.normal(size=(4096, 32))
    a = rng.normal(size=(256, 8))
    b = rng.normal(size=(256, 8))
    cases = [
        ("gaussian_rows 4096x32", lambda: kernels._gaussian_rows_nb(seeds, 32), lambda: kernels._gaussian_rows_np(seeds, 32)),
        ("row_stats 4096x32", lambda: kernels._row_stats_nb(rows), lambda: kernels._row_stats_np(rows)),
        ("rbf_mean 256x256x8", lambda: kernels._rbf_mean_nb(a, b, 1.0), lambda: kernels._rbf_mean_np(a, b, 1.0)),
    ]
    print(f"{'kernel':<24}{'compile s':>12}{'numba ms':>12}{'numpy ms':>12}{'speedup':>10}")
    for name, nb, npy in cases:
        t = time.perf_counter()
        nb()
        compile_s = time.perf_counter() - t
        t_nb = best_of(nb, args.repeat)
        t_np = best_of(npy, args.repeat)
        print(f"{name:<24}{compile_s:>12.3f}{t_nb * 1e3:>12.3f}{t_np * 1e3:>12.3f}{t_np / t_nb:>10.1f}")


if __name__ == "__main__":
    main()
