"""Pure-numpy reference kernels.

These define the numeric contract: the numba backend must reproduce the same
operation order (same reduction trees, same term order in Hermite tensors).
"""

import numpy as np

from .tables import sorted_power

NAME = "numpy"


def fold_sum(block: np.ndarray) -> np.ndarray:
    """Sum rows of ``block`` (n, F) through a fixed binary tree.

    The block is zero-padded to the next power of two and halved repeatedly,
    so the result is independent of any outer work splitting.
    """
    n = block.shape[0]
    size = 1
    while size < n:
        size *= 2
    if size != n:
        padded = np.zeros((size,) + block.shape[1:], dtype=np.float64)
        padded[:n] = block
        block = padded
    else:
        block = block.astype(np.float64, copy=True)
    while size > 1:
        half = size // 2
        block = block[:half] + block[half:size]
        size = half
    return block[0]


def hermite_flat(z: np.ndarray, c: np.ndarray, m: int) -> np.ndarray:
    """Hermite tensors of a diagonal Gaussian, flattened per sample.

    z: (N, d) residuals x - mu; c: (d,) inverse variances. Returns
    (N, d**m) row-major entries of the order-m tensor H_m. With c = 1 these
    are the probabilists' Hermite tensors: H_1 = z, H_2 = zz^T - I, ...
    """
    n, d = z.shape
    u = z * c[None, :]
    if m == 1:
        return u.copy()
    uprod = sorted_power(u, d, m)
    cdiag = np.zeros((d, d))
    np.fill_diagonal(cdiag, c)
    if m == 2:
        out = uprod.reshape(n, d, d) - cdiag[None, :, :]
        return out.reshape(n, d * d)
    if m == 3:
        h = uprod.reshape(n, d, d, d)
        h = h - u[:, :, None, None] * cdiag[None, None, :, :]
        h = h - u[:, None, :, None] * cdiag[None, :, None, :]
        h = h - u[:, None, None, :] * cdiag[None, :, :, None]
        return h.reshape(n, d**3)
    if m == 4:
        h = uprod.reshape(n, d, d, d, d)
        uu = u[:, :, None] * u[:, None, :]
        h = h - cdiag[None, :, :, None, None] * uu[:, None, None, :, :]
        h = h - cdiag[None, :, None, :, None] * uu[:, None, :, None, :]
        h = h - cdiag[None, :, None, None, :] * uu[:, None, :, :, None]
        h = h - cdiag[None, None, :, :, None] * uu[:, :, None, None, :]
        h = h - cdiag[None, None, :, None, :] * uu[:, :, None, :, None]
        h = h - cdiag[None, None, None, :, :] * uu[:, :, :, None, None]
        h = h + cdiag[:, :, None, None] * cdiag[None, None, :, :]
        h = h + (cdiag[:, None, :, None] * cdiag[None, :, None, :])[None]
        h = h + (cdiag[:, None, None, :] * cdiag[None, :, :, None])[None]
        return h.reshape(n, d**4)
    raise ValueError(f"hermite_flat supports orders 1..4, got {m}")


def tpi_contract(t3: np.ndarray, u: np.ndarray) -> np.ndarray:
    """T(I, u, u) for an order-3 tensor."""
    return np.einsum("ijk,j,k->i", t3, u, u)


def power_iterate(t3, u0, n_iter, tol):
    """Repeated u <- T(I,u,u)/norm with early stop on step size < tol.

    Returns (u, iterations_done, converged, broke_down).
    """
    u = u0.astype(np.float64, copy=True)
    for it in range(1, n_iter + 1):
        v = tpi_contract(t3, u)
        nrm = float(np.sqrt(np.sum(v * v)))
        if nrm == 0.0 or not np.isfinite(nrm):
            return u, it, False, True
        v = v / nrm
        step = float(np.sqrt(np.sum((v - u) ** 2)))
        u = v
        if step < tol:
            return u, it, True, False
    return u, n_iter, False, False
