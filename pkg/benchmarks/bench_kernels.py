"""Compare the compiled and numpy kernel backends.

Run with ``python benchmarks/bench_kernels.py``; prints one line per kernel,
backend and problem size, then the speedup of the compiled backend.
"""
import argparse
import timeit

import numpy as np

from moodkit import kernels


def _probs(rng, M, n, K):
    p = rng.random((M, n, K))
    return p / p.sum(axis=-1, keepdims=True)


def bench(repeat=5, number=20):
    rng = np.random.default_rng(0)
    impls = kernels.backends()
    rows = []
    for M, n, K in [(2, 16, 10), (3, 256, 10), (2, 1024, 100)]:
        P = _probs(rng, M, n, K)
        for metric, code in [("hellinger", kernels.HELLINGER), ("wasserstein1d", kernels.WASSERSTEIN)]:
            for name, mod in impls.items():
                t = min(timeit.repeat(lambda: mod.pair_discrepancy(P, code), repeat=repeat,
                                      number=number)) / number
                rows.append((f"pair_discrepancy[{metric}] M={M} n={n} K={K}", name, t))
    for size in (1_000, 100_000):
        a = np.sort(rng.integers(0, size // 10, size).astype(float))
        b = np.sort(rng.integers(0, size // 10, size).astype(float))
        for name, mod in impls.items():
            t = min(timeit.repeat(lambda: mod.auroc_sorted(a, b), repeat=repeat, number=number)) / number
            rows.append((f"auroc_sorted n={size}", name, t))
    return rows


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--number", type=int, default=20)
    args = ap.parse_args(argv)
    rows = bench(args.repeat, args.number)
    by_case = {}
    for case, name, t in rows:
        print(f"{case:<52s} {name:<7s} {t * 1e6:10.1f} us")
        by_case.setdefault(case, {})[name] = t
    if "cython" in kernels.backends():
        print()
        for case, times in by_case.items():
            print(f"{case:<52s} speedup {times['python'] / times['cython']:6.1f}x")
    else:
        print("compiled backend unavailable; only the numpy fallback was timed")


if __name__ == "__main__":
    main()
