"""Pure-numpy bitset kernels (fallback backend).

All functions take contiguous uint64 arrays of equal length and return
exact integer counts, matching the compiled backend bit for bit.
"""

from __future__ import annotations

import numpy as np


def count(a: np.ndarray) -> int:
    return int(np.bitwise_count(a).sum())


def and_count(a: np.ndarray, b: np.ndarray) -> int:
    return int(np.bitwise_count(np.bitwise_and(a, b)).sum())


def and_count_pair(a: np.ndarray, b: np.ndarray, c: np.ndarray) -> tuple[int, int]:
    """popcount(a & b) and popcount(a & b & c) in one pass.

    The miner uses this for (val support, val correct) with c the
    correctness bitset.
    """
    ab = np.bitwise_and(a, b)
    return int(np.bitwise_count(ab).sum()), int(
        np.bitwise_count(np.bitwise_and(ab, c)).sum()
    )


def and_into(a: np.ndarray, b: np.ndarray, out: np.ndarray) -> int:
    """out[:] = a & b; returns popcount(out)."""
    np.bitwise_and(a, b, out=out)
    return int(np.bitwise_count(out).sum())
