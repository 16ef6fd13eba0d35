"""Shared index tables for symmetric tensor construction.

Entries of symmetric tensors (outer powers, Hermite tensors) are built by
multiplying coordinates in sorted-index order, so every permutation of an
index tuple produces the bit-identical float. Both kernel backends use the
same tables / the same ordering.
"""

from functools import lru_cache

import numpy as np


@lru_cache(maxsize=256)
def sorted_index_table(d: int, m: int) -> np.ndarray:
    """(m, d**m) int64 array: row-major index tuples, sorted ascending per column."""
    idx = np.indices((d,) * m, dtype=np.int64).reshape(m, -1)
    idx = np.sort(idx, axis=0)
    idx.setflags(write=False)
    return idx


def sorted_power(u: np.ndarray, d: int, m: int) -> np.ndarray:
    """Outer power of each row of ``u`` with sorted-index multiplication order.

    u: (N, d) -> (N, d**m); entry = u[s1]*u[s2]*...*u[sm] with s ascending.
    """
    sidx = sorted_index_table(d, m)
    out = u[:, sidx[0]]
    for a in range(1, m):
        out = out * u[:, sidx[a]]
    return out
