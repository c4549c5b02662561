"""Compare the numba and numpy paths of the hot counting kernels.

Covers both counting regimes: bounded keys (bincount) and unbounded keys
(sort/unique). Run: python benchmarks/bench_kernels.py
"""

import time

import numpy as np

from flame_match import _kernels


def bench(fn, *args, repeat=7):
    fn(*args)  # warm up / JIT compile
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def row(n, kernel, t_np, t_nb):
    speedup = t_np / t_nb if t_nb == t_nb else float("nan")
    print(f"{n:>10} {kernel:>28} {t_np * 1e3:>10.2f}ms {t_nb * 1e3:>10.2f}ms {speedup:>7.2f}x")


def main():
    rng = np.random.default_rng(0)
    print(f"numba available: {_kernels.HAVE_NUMBA}")
    print(f"{'n':>10} {'kernel':>28} {'numpy':>12} {'numba':>12} {'speedup':>8}")
    nan = float("nan")
    for n in (10_000, 100_000, 1_000_000):
        bound = n // 8 + 1
        small = rng.integers(0, bound, size=n).astype(np.int64)
        wide = rng.integers(0, 2**40, size=n).astype(np.int64)

        t_np = bench(_kernels.occurrence_counts_numpy, small, bound)
        t_nb = bench(_kernels._occurrence_counts_bincount_jit, small, bound) if _kernels.HAVE_NUMBA else nan
        if _kernels.HAVE_NUMBA:
            assert np.array_equal(
                _kernels.occurrence_counts_numpy(small, bound),
                _kernels._occurrence_counts_bincount_jit(small, bound),
            )
        row(n, "occurrence_counts/bounded", t_np, t_nb)

        t_np = bench(_kernels.occurrence_counts_numpy, wide)
        t_nb = bench(_kernels._occurrence_counts_sort_jit, wide) if _kernels.HAVE_NUMBA else nan
        if _kernels.HAVE_NUMBA:
            assert np.array_equal(
                _kernels.occurrence_counts_numpy(wide), _kernels._occurrence_counts_sort_jit(wide)
            )
        row(n, "occurrence_counts/unbounded", t_np, t_nb)

        t_np = bench(_kernels.sorted_runs_numpy, small)
        t_nb = bench(_kernels._sorted_runs_jit, small) if _kernels.HAVE_NUMBA else nan
        if _kernels.HAVE_NUMBA:
            o1, s1 = _kernels.sorted_runs_numpy(small)
            o2, s2 = _kernels._sorted_runs_jit(small)
            assert np.array_equal(s1, s2) and np.array_equal(small[o1], small[o2])
        row(n, "sorted_runs", t_np, t_nb)


if __name__ == "__main__":
    main()
