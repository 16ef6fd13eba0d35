"""Dense tensors and the multilinear algebra the rest of the package uses.

Conventions
-----------
* Storage is dense row-major float64 (last index fastest); order capped at 4.
* Gradients of tensor-valued functions append the differentiation index as
  the LAST mode: grad F(x)[i1..ir, j] = dF[i1..ir]/dx_j.
* Permutations are 1-based: mode ``i`` of ``transpose(T, pi)`` corresponds to
  mode ``pi[i]`` of the input.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from itertools import permutations as _permutations
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from ._kernels.tables import sorted_power
from .config import DEFAULT_FD_STEP, ELEMENT_BUDGET, MAX_TENSOR_ORDER
from .errors import (
    NonFiniteError,
    ShapeError,
    SizeLimitError,
    TensorFormatError,
    ValidationError,
)

STN1_MAGIC = b"STN1"


class DenseTensor:
    """Immutable dense tensor of order 0..4.

    Wraps a read-only float64 ndarray; ``order`` is the number of modes and
    ``dims`` the shape. All entries are guaranteed finite.
    """

    __slots__ = ("data",)

    def __init__(self, data, copy: bool = True):
        arr = np.array(data, dtype=np.float64, copy=copy, order="C")
        if arr.ndim > MAX_TENSOR_ORDER:
            raise ValidationError(
                f"tensor order {arr.ndim} exceeds cap {MAX_TENSOR_ORDER}"
            )
        if arr.size > ELEMENT_BUDGET:
            raise SizeLimitError(
                f"tensor with {arr.size} elements exceeds budget {ELEMENT_BUDGET}"
            )
        if arr.size == 0:
            raise ValidationError("tensor dims must all be positive")
        if not np.isfinite(arr).all():
            raise NonFiniteError("tensor entries must be finite")
        arr.setflags(write=False)
        self.data = arr

    @property
    def order(self) -> int:
        return self.data.ndim

    @property
    def dims(self) -> tuple[int, ...]:
        return self.data.shape

    def __array__(self, dtype=None, copy=None):
        if dtype is None:
            return self.data if not copy else self.data.copy()
        return self.data.astype(dtype)

    def __getitem__(self, key):
        return self.data[key]

    def __repr__(self) -> str:
        return f"DenseTensor(order={self.order}, dims={self.dims})"


def as_ndarray(t) -> np.ndarray:
    """Accept DenseTensor or array-like, return a float64 ndarray."""
    if isinstance(t, DenseTensor):
        return t.data
    return np.asarray(t, dtype=np.float64)


@dataclass(frozen=True)
class Permutation:
    """A 1-based permutation of mode indices 1..r."""

    entries: tuple[int, ...]

    def __post_init__(self):
        entries = tuple(int(e) for e in self.entries)
        object.__setattr__(self, "entries", entries)
        if sorted(entries) != list(range(1, len(entries) + 1)):
            raise ValidationError(
                f"permutation {entries} is not a bijection on 1..{len(entries)}"
            )

    def __len__(self) -> int:
        return len(self.entries)

    def inverse(self) -> "Permutation":
        inv = [0] * len(self.entries)
        for pos, val in enumerate(self.entries):
            inv[val - 1] = pos + 1
        return Permutation(tuple(inv))


def _perm_entries(pi, order: int) -> tuple[int, ...]:
    entries = pi.entries if isinstance(pi, Permutation) else Permutation(tuple(pi)).entries
    if len(entries) != order:
        raise ValidationError(
            f"permutation length {len(entries)} != tensor order {order}"
        )
    return entries


def tensor_product(a, b) -> DenseTensor:
    """Outer product: entry (i..., j...) = A(i...) * B(j...)."""
    arr_a, arr_b = as_ndarray(a), as_ndarray(b)
    if arr_a.size * arr_b.size > ELEMENT_BUDGET:
        raise SizeLimitError(
            f"product would hold {arr_a.size * arr_b.size} elements "
            f"(budget {ELEMENT_BUDGET})"
        )
    return DenseTensor(np.multiply.outer(arr_a, arr_b), copy=False)


def multilinear_form(t, m1, m2, m3) -> DenseTensor:
    """T(M1, M2, M3): contract each mode of an order-3 tensor with a matrix.

    Entry (i1,i2,i3) = sum_{j1,j2,j3} T(j1,j2,j3) M1(j1,i1) M2(j2,i2) M3(j3,i3).
    """
    arr = as_ndarray(t)
    if arr.ndim != 3:
        raise ShapeError(f"multilinear_form needs an order-3 tensor, got {arr.ndim}")
    mats = []
    for axis, m in enumerate((m1, m2, m3)):
        mat = as_ndarray(m)
        if mat.ndim != 2 or mat.shape[0] != arr.shape[axis]:
            raise ShapeError(
                f"matrix {axis + 1} must have {arr.shape[axis]} rows, "
                f"got shape {mat.shape}"
            )
        mats.append(mat)
    out = np.einsum("jkl,ja,kb,lc->abc", arr, *mats)
    return DenseTensor(out, copy=False)


def contract_fibers(t, v, w) -> np.ndarray:
    """T(I, v, w) = sum_{j,l} v_j w_l T(:,j,l), combining mode-1 fibers."""
    arr = as_ndarray(t)
    vv, ww = as_ndarray(v), as_ndarray(w)
    if arr.ndim != 3:
        raise ShapeError(f"contract_fibers needs an order-3 tensor, got {arr.ndim}")
    if vv.shape != (arr.shape[1],) or ww.shape != (arr.shape[2],):
        raise ShapeError(
            f"vectors must have lengths {arr.shape[1]} and {arr.shape[2]}"
        )
    return np.einsum("ijk,j,k->i", arr, vv, ww)


def transpose(t, pi) -> DenseTensor:
    """Permute tensor modes: mode ``i`` of the output is mode ``pi[i]`` of the input."""
    arr = as_ndarray(t)
    entries = _perm_entries(pi, arr.ndim)
    axes = tuple(p - 1 for p in entries)
    return DenseTensor(np.transpose(arr, axes), copy=True)


def rank1_sum(weights: Sequence[float], vectors, m: int) -> DenseTensor:
    """sum_j w_j v_j^(outer m): a weighted sum of symmetric rank-1 tensors.

    Entries are built in sorted-index multiplication order, so the result is
    bitwise invariant under mode permutations.
    """
    weights = np.asarray(weights, dtype=np.float64)
    vecs = np.asarray(vectors, dtype=np.float64)
    if weights.ndim != 1 or weights.size == 0:
        raise ValidationError("rank1_sum needs at least one component")
    if vecs.ndim != 2 or vecs.shape[0] != weights.size:
        raise ShapeError(
            f"need one vector per weight; got {vecs.shape} vs {weights.size} weights"
        )
    if not 1 <= m <= MAX_TENSOR_ORDER:
        raise ValidationError(f"order must be in 1..{MAX_TENSOR_ORDER}, got {m}")
    d = vecs.shape[1]
    if d**m > ELEMENT_BUDGET:
        raise SizeLimitError(f"{d}**{m} elements exceeds budget {ELEMENT_BUDGET}")
    acc = np.zeros(d**m)
    for w, v in zip(weights, vecs):
        acc = acc + w * sorted_power(v[None, :], d, m)[0]
    return DenseTensor(acc.reshape((d,) * m), copy=False)


def numeric_gradient(
    f: Callable[[np.ndarray], np.ndarray],
    x,
    m: int = 1,
    h: float = DEFAULT_FD_STEP,
) -> DenseTensor:
    """Central-difference estimate of the order-m derivative of ``f`` at ``x``.

    Differentiation indices are appended as the last modes. Higher orders nest
    first-order central differences; the step for coordinate i is
    ``h * (1 + |x_i|)``. Accuracy on smooth inputs at the default step is
    roughly 1e-9 / 1e-6 / 1e-4 for m = 1 / 2 / 3.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ShapeError("numeric_gradient expects a 1-d point")
    if not 1 <= m <= 3:
        raise ValidationError(f"numeric_gradient supports m in 1..3, got {m}")
    if h <= 0:
        raise ValidationError("step must be positive")

    def base(xv):
        return np.asarray(f(xv), dtype=np.float64)

    g = base
    for _ in range(m):
        g = _fd_once(g, h)
    val = g(x)
    if not np.isfinite(val).all():
        raise NonFiniteError("function evaluation produced non-finite values")
    return DenseTensor(val, copy=False)


def _fd_once(g, h):
    def grad(xv):
        cols = []
        for j in range(xv.size):
            step = h * (1.0 + abs(xv[j]))
            e = np.zeros_like(xv)
            e[j] = step
            cols.append((g(xv + e) - g(xv - e)) / (2.0 * step))
        return np.stack(cols, axis=-1)

    return grad


def symmetrize3(t) -> tuple[np.ndarray, float]:
    """Average an order-3 array over all 6 mode permutations.

    Returns (symmetric part, max abs deviation of the input from it).
    """
    arr = as_ndarray(t)
    if arr.ndim != 3:
        raise ShapeError("symmetrize3 needs an order-3 tensor")
    acc = np.zeros_like(arr)
    for perm in _permutations(range(3)):
        acc += np.transpose(arr, perm)
    sym = acc / 6.0
    return sym, float(np.max(np.abs(arr - sym)))


def write_tensor(path, t) -> None:
    """Write the binary tensor format: magic 'STN1', u8 order, u64 dims, f64 data."""
    arr = as_ndarray(t)
    payload = bytearray()
    payload += STN1_MAGIC
    payload += struct.pack("<B", arr.ndim)
    for dim in arr.shape:
        payload += struct.pack("<Q", dim)
    payload += np.ascontiguousarray(arr, dtype="<f8").tobytes()
    Path(path).write_bytes(bytes(payload))


def read_tensor(path) -> DenseTensor:
    """Read the binary tensor format; rejects bad magic, truncation, trailing bytes."""
    blob = Path(path).read_bytes()
    if len(blob) < 5:
        raise TensorFormatError(f"{path}: too short for a tensor file")
    if blob[:4] != STN1_MAGIC:
        raise TensorFormatError(f"{path}: bad magic {blob[:4]!r}")
    order = blob[4]
    if order > MAX_TENSOR_ORDER:
        raise TensorFormatError(f"{path}: order {order} exceeds cap {MAX_TENSOR_ORDER}")
    header_end = 5 + 8 * order
    if len(blob) < header_end:
        raise TensorFormatError(f"{path}: truncated header")
    dims = struct.unpack(f"<{order}Q", blob[5:header_end]) if order else ()
    if any(dim == 0 for dim in dims):
        raise TensorFormatError(f"{path}: zero dimension in {dims}")
    count = math.prod(dims)
    if count > ELEMENT_BUDGET:
        raise SizeLimitError(f"{path}: {count} elements exceeds budget")
    expected = header_end + 8 * count
    if len(blob) < expected:
        raise TensorFormatError(f"{path}: truncated payload")
    if len(blob) > expected:
        raise TensorFormatError(f"{path}: trailing bytes after payload")
    data = np.frombuffer(blob, dtype="<f8", count=count, offset=header_end)
    return DenseTensor(data.reshape(dims))
