"""Numba-compiled kernels.

Mirrors ``numpy_impl`` operation for operation: same reduction tree, same
sorted-index multiplication order, same term order in the Hermite tensors.
No fastmath: IEEE semantics are part of the determinism contract.
"""

import numpy as np
from numba import njit

NAME = "numba"


@njit(cache=True)
def _fold_sum_2d(block):
    n, f = block.shape
    size = 1
    while size < n:
        size *= 2
    work = np.zeros((size, f))
    work[:n, :] = block
    while size > 1:
        half = size // 2
        for i in range(half):
            for j in range(f):
                work[i, j] = work[i, j] + work[half + i, j]
        size = half
    return work[0].copy()


def fold_sum(block):
    return _fold_sum_2d(np.ascontiguousarray(block, dtype=np.float64))


@njit(cache=True)
def _hermite1(z, c, out):
    n, d = z.shape
    for s in range(n):
        for i in range(d):
            out[s, i] = z[s, i] * c[i]


@njit(cache=True)
def _hermite2(z, c, out):
    n, d = z.shape
    u = np.empty(d)
    for s in range(n):
        for i in range(d):
            u[i] = z[s, i] * c[i]
        pos = 0
        for i in range(d):
            for j in range(d):
                a0 = i if i <= j else j
                a1 = j if i <= j else i
                val = u[a0] * u[a1]
                if i == j:
                    val -= c[i]
                out[s, pos] = val
                pos += 1


@njit(cache=True)
def _hermite3(z, c, out):
    n, d = z.shape
    u = np.empty(d)
    for s in range(n):
        for i in range(d):
            u[i] = z[s, i] * c[i]
        pos = 0
        for i in range(d):
            for j in range(d):
                for k in range(d):
                    a0, a1, a2 = i, j, k
                    if a0 > a1:
                        a0, a1 = a1, a0
                    if a1 > a2:
                        a1, a2 = a2, a1
                    if a0 > a1:
                        a0, a1 = a1, a0
                    val = (u[a0] * u[a1]) * u[a2]
                    if j == k:
                        val -= u[i] * c[j]
                    if i == k:
                        val -= u[j] * c[i]
                    if i == j:
                        val -= u[k] * c[i]
                    out[s, pos] = val
                    pos += 1


@njit(cache=True)
def _hermite4(z, c, out):
    n, d = z.shape
    u = np.empty(d)
    for s in range(n):
        for i in range(d):
            u[i] = z[s, i] * c[i]
        pos = 0
        for i in range(d):
            for j in range(d):
                for k in range(d):
                    for l in range(d):
                        a0, a1, a2, a3 = i, j, k, l
                        if a0 > a1:
                            a0, a1 = a1, a0
                        if a2 > a3:
                            a2, a3 = a3, a2
                        if a0 > a2:
                            a0, a2 = a2, a0
                        if a1 > a3:
                            a1, a3 = a3, a1
                        if a1 > a2:
                            a1, a2 = a2, a1
                        val = ((u[a0] * u[a1]) * u[a2]) * u[a3]
                        if i == j:
                            val -= c[i] * (u[k] * u[l])
                        if i == k:
                            val -= c[i] * (u[j] * u[l])
                        if i == l:
                            val -= c[i] * (u[j] * u[k])
                        if j == k:
                            val -= c[j] * (u[i] * u[l])
                        if j == l:
                            val -= c[j] * (u[i] * u[k])
                        if k == l:
                            val -= c[k] * (u[i] * u[j])
                        if i == j and k == l:
                            val += c[i] * c[k]
                        if i == k and j == l:
                            val += c[i] * c[j]
                        if i == l and j == k:
                            val += c[i] * c[j]
                        out[s, pos] = val
                        pos += 1


def hermite_flat(z, c, m):
    z = np.ascontiguousarray(z, dtype=np.float64)
    c = np.ascontiguousarray(c, dtype=np.float64)
    n, d = z.shape
    out = np.empty((n, d**m))
    if m == 1:
        _hermite1(z, c, out)
    elif m == 2:
        _hermite2(z, c, out)
    elif m == 3:
        _hermite3(z, c, out)
    elif m == 4:
        _hermite4(z, c, out)
    else:
        raise ValueError(f"hermite_flat supports orders 1..4, got {m}")
    return out


@njit(cache=True)
def _tpi(t3, u):
    d = u.shape[0]
    out = np.empty(d)
    for i in range(d):
        acc = 0.0
        for j in range(d):
            uj = u[j]
            for k in range(d):
                acc += t3[i, j, k] * uj * u[k]
        out[i] = acc
    return out


def tpi_contract(t3, u):
    return _tpi(
        np.ascontiguousarray(t3, dtype=np.float64),
        np.ascontiguousarray(u, dtype=np.float64),
    )


@njit(cache=True)
def _power_iterate(t3, u0, n_iter, tol):
    d = u0.shape[0]
    u = u0.copy()
    for it in range(1, n_iter + 1):
        v = _tpi(t3, u)
        nrm = 0.0
        for i in range(d):
            nrm += v[i] * v[i]
        nrm = np.sqrt(nrm)
        if nrm == 0.0 or not np.isfinite(nrm):
            return u, it, False, True
        step = 0.0
        for i in range(d):
            v[i] = v[i] / nrm
            diff = v[i] - u[i]
            step += diff * diff
            u[i] = v[i]
        if np.sqrt(step) < tol:
            return u, it, True, False
    return u, n_iter, False, False


def power_iterate(t3, u0, n_iter, tol):
    u, it, conv, broke = _power_iterate(
        np.ascontiguousarray(t3, dtype=np.float64),
        np.ascontiguousarray(u0, dtype=np.float64),
        n_iter,
        tol,
    )
    return u, int(it), bool(conv), bool(broke)
