"""Bit-parallel counting kernels with backend selection at import.

The slice miner evaluates every candidate conjunction by intersecting
packed membership bitsets and popcounting the result; that loop
dominates mining runtime. A Cython extension provides the fast path and
a numpy implementation is the always-available fallback. Both produce
identical integers, so mining output is bit-identical across backends.
"""

from __future__ import annotations

import numpy as np

from . import _bitset_np

try:
    from . import _bitset_cy as _impl

    BACKEND = "cython"
except ImportError:
    _impl = _bitset_np
    BACKEND = "numpy"

and_count = _impl.and_count
and_count_pair = _impl.and_count_pair
and_into = _impl.and_into
count = _impl.count


def pack_bits(mask) -> np.ndarray:
    """Pack a boolean row mask into a little-endian uint64 bitset array."""
    mask = np.asarray(mask, dtype=bool)
    packed = np.packbits(mask, bitorder="little")
    pad = (-len(packed)) % 8
    if pad:
        packed = np.concatenate([packed, np.zeros(pad, dtype=np.uint8)])
    return packed.view(np.uint64)


def backends() -> dict[str, object]:
    """All importable backend modules, keyed by name (for tests/benchmarks)."""
    found = {"numpy": _bitset_np}
    if BACKEND == "cython":
        found["cython"] = _impl
    return found
