"""Time the numba kernels against their numpy fallbacks.

Usage: python3 benchmarks/bench_kernels.py [--repeat N]

Both backends are called directly, so a single process covers both. Set
HYTL_NO_NUMBA=1 to check that the package runs without numba; the numba
column is then skipped.
"""
import argparse
import time

import numpy as np
from scipy.linalg import expm

from hytl import kernels


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def cases():
    rng = np.random.default_rng(0)
    for n in (1_000, 10_000, 100_000):
        v = rng.normal(size=n + 400)
        w = rng.normal(size=n + 400)
        yield f"window max  n={n:>6} w=100", "_window_reduce", (v, 0, 100, n, True)
        yield f"until scan  n={n:>6} w=20 ", "_until", (v, w, 5, 20, n)
    E = expm((rng.normal(size=(5, 5)) - 3 * np.eye(5)) * 0.01)
    for count in (1_000, 6_000, 60_000):
        yield f"propagate   n={count:>6} d=5  ", "_propagate", (E, rng.normal(size=5), count)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    print(f"backend in use: {kernels.BACKEND}")
    print(f"{'kernel':32s} {'numpy [ms]':>11s} {'numba [ms]':>11s} {'speedup':>8s}")
    for name, base, call in cases():
        np_fn = getattr(kernels, base + "_np")
        t_np = best_of(lambda: np_fn(*call), args.repeat)
        if kernels.HAVE_NUMBA:
            nb_fn = getattr(kernels, base + "_nb")
            nb_fn(*call)  # compile outside the timed region
            t_nb = best_of(lambda: nb_fn(*call), args.repeat)
            print(f"{name:32s} {t_np * 1e3:11.3f} {t_nb * 1e3:11.3f} {t_np / t_nb:7.1f}x")
        else:
            print(f"{name:32s} {t_np * 1e3:11.3f} {'-':>11s} {'-':>8s}")


if __name__ == "__main__":
    main()
