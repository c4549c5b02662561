"""Hot counting kernels behind the matching backends.

Two interchangeable implementations of each kernel: a numba ``@njit`` version
and a pure-numpy version. Selection order:

* ``FLAME_KERNELS=numpy``  force the numpy path
* ``FLAME_KERNELS=numba``  force numba (raises if numba is unavailable)
* unset or ``auto``        numba when importable, else numpy

Counting dispatches on the key bound: mixed-radix keys carry a known
exclusive upper bound, and when it is small relative to n a one-pass
bincount beats any sort. Both paths are deterministic and return identical
arrays; ``benchmarks/bench_kernels.py`` compares them in both regimes.
"""

from __future__ import annotations

import os

import numpy as np

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba installed
    numba = None
    HAVE_NUMBA = False

if HAVE_NUMBA:
    # FLAME_THREADS caps numba's thread pool; kernels here are serial, so the
    # cap only matters if a parallel kernel lands later
    _cap = os.environ.get("FLAME_THREADS")
    if _cap:
        try:
            numba.set_num_threads(max(1, min(int(_cap), numba.config.NUMBA_NUM_THREADS)))
        except (ValueError, RuntimeError):
            pass


def kernel_mode() -> str:
    """Resolve the active kernel path from the environment."""
    mode = os.environ.get("FLAME_KERNELS", "auto").strip().lower()
    if mode not in ("auto", "numba", "numpy"):
        raise ValueError(f"FLAME_KERNELS must be auto/numba/numpy, got {mode!r}")
    if mode == "numba" and not HAVE_NUMBA:
        raise RuntimeError("FLAME_KERNELS=numba but numba is not installed")
    if mode == "auto":
        return "numba" if HAVE_NUMBA else "numpy"
    return mode


def _bincount_ok(n: int, bound) -> bool:
    # tally array stays O(n) sized (or trivially small)
    return bound is not None and 0 < bound <= max(8 * n, 1 << 16)


def occurrence_counts_numpy(keys: np.ndarray, bound=None) -> np.ndarray:
    """counts[i] = number of occurrences of keys[i] within keys."""
    if keys.size == 0:
        return np.zeros(0, dtype=np.int64)
    if _bincount_ok(keys.size, bound):
        return np.bincount(keys, minlength=int(bound))[keys]
    _, inverse, counts = np.unique(keys, return_inverse=True, return_counts=True)
    return counts[inverse].astype(np.int64, copy=False)


def sorted_runs_numpy(keys: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Stable order sorting ``keys`` plus start offsets of each equal-value run.

    Returns (order, starts) where ``keys[order]`` is sorted and
    ``order[starts[g]:starts[g+1]]`` indexes run g; ``starts`` ends with n.
    """
    order = np.argsort(keys, kind="stable")
    if keys.size == 0:
        return order, np.zeros(1, dtype=np.int64)
    sk = keys[order]
    boundaries = np.flatnonzero(sk[1:] != sk[:-1]) + 1
    starts = np.concatenate(([0], boundaries, [keys.size])).astype(np.int64)
    return order, starts


if HAVE_NUMBA:

    @numba.njit(cache=True)
    def _occurrence_counts_sort_jit(keys):  # pragma: no cover - compiled
        n = keys.size
        out = np.empty(n, np.int64)
        order = np.argsort(keys, kind="mergesort")
        i = 0
        while i < n:
            j = i + 1
            ki = keys[order[i]]
            while j < n and keys[order[j]] == ki:
                j += 1
            run = j - i
            for t in range(i, j):
                out[order[t]] = run
            i = j
        return out

    @numba.njit(cache=True)
    def _occurrence_counts_bincount_jit(keys, bound):  # pragma: no cover - compiled
        tally = np.zeros(bound, np.int64)
        for i in range(keys.size):
            tally[keys[i]] += 1
        out = np.empty(keys.size, np.int64)
        for i in range(keys.size):
            out[i] = tally[keys[i]]
        return out

    @numba.njit(cache=True)
    def _sorted_runs_jit(keys):  # pragma: no cover - compiled
        n = keys.size
        order = np.argsort(keys, kind="mergesort")
        nruns = 0
        for i in range(n):
            if i == 0 or keys[order[i]] != keys[order[i - 1]]:
                nruns += 1
        starts = np.empty(nruns + 1, np.int64)
        r = 0
        for i in range(n):
            if i == 0 or keys[order[i]] != keys[order[i - 1]]:
                starts[r] = i
                r += 1
        starts[nruns] = n
        return order, starts


def occurrence_counts(keys: np.ndarray, bound=None) -> np.ndarray:
    if kernel_mode() == "numba" and keys.dtype == np.int64 and keys.size > 0:
        if _bincount_ok(keys.size, bound):
            return _occurrence_counts_bincount_jit(keys, int(bound))
        return _occurrence_counts_sort_jit(keys)
    return occurrence_counts_numpy(keys, bound)


def sorted_runs(keys: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    if kernel_mode() == "numba" and keys.dtype == np.int64 and keys.size > 0:
        return _sorted_runs_jit(keys)
    return sorted_runs_numpy(keys)
