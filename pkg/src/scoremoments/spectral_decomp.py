"""Rank-1 extraction from symmetric derivative matrices and tensors.

Order-3 tensors go through multi-start tensor power iteration
(u <- T(I,u,u)/||.||), the converged candidates are grouped by a greedy
clustering pass, and weights are read off as T(u,u,u). Matrices reduce to an
eigendecomposition. Whitening maps a non-orthogonal undercomplete family to
an orthogonal one via the second-order moment.

All starts are seeded independently (seed + start index), so results are
identical however the starts are scheduled.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._kernels import kernels
from .errors import (
    BreakdownError,
    PartialResultError,
    RankDeficiencyError,
    ShapeError,
    ValidationError,
)
from .tensor_core import DenseTensor, as_ndarray, rank1_sum, symmetrize3

# Asymmetry below this is treated as roundoff and symmetrized away silently;
# above _REJECT_ASYM (relative to max |T|) the tensor is rejected outright.
_SYM_TOL = 1e-10
_REJECT_ASYM = 1e-6


@dataclass
class DecompConfig:
    """Knobs for the multi-start power-iteration decomposition.

    n_inits defaults to max(50, 10 k); nu is the clustering parameter (two
    centers never have |<a, b>| > nu/2).
    """

    k: int
    n_inits: int | None = None
    n_iters: int = 100
    nu: float = 0.5
    tol: float = 1e-10
    seed: int = 0
    init: str = "random"

    def __post_init__(self):
        self.k = int(self.k)
        if self.n_inits is None:
            self.n_inits = max(50, 10 * self.k)
        self.n_inits = int(self.n_inits)
        self.n_iters = int(self.n_iters)
        if self.k < 1:
            raise ValidationError("k must be >= 1")
        if self.n_inits < self.k:
            raise ValidationError("number of starts must be >= k")
        if self.n_iters < 1:
            raise ValidationError("iteration count must be >= 1")
        if not 0.0 < self.nu <= 2.0:
            raise ValidationError("nu must be in (0, 2]")
        if self.tol <= 0:
            raise ValidationError("tol must be positive")
        if self.init not in ("random", "svd"):
            raise ValidationError(f"init must be 'random' or 'svd', got {self.init!r}")

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "n_inits": self.n_inits,
            "n_iters": self.n_iters,
            "nu": self.nu,
            "tol": self.tol,
            "seed": self.seed,
            "init": self.init,
        }

    @classmethod
    def from_dict(cls, spec: dict) -> "DecompConfig":
        known = {f for f in cls.__dataclass_fields__}
        bad = set(spec) - known
        if bad:
            raise ValidationError(f"unknown decomposition options {sorted(bad)}")
        return cls(**spec)


@dataclass
class DecompositionResult:
    """Recovered rank-1 components, largest |weight| first.

    Vectors are unit rows, sign-canonicalized so the largest-magnitude
    coordinate is positive (the weight absorbs the sign for odd orders).
    """

    weights: np.ndarray
    vectors: np.ndarray
    residual_fro: float
    candidates_kept: int
    starts: list = field(default_factory=list)

    @property
    def components(self) -> list:
        return [(float(w), v) for w, v in zip(self.weights, self.vectors)]

    def to_dict(self) -> dict:
        return {
            "weights": self.weights.tolist(),
            "vectors": self.vectors.tolist(),
            "residual_fro": self.residual_fro,
            "candidates_kept": self.candidates_kept,
            "starts": self.starts,
        }

    @classmethod
    def from_dict(cls, spec: dict) -> "DecompositionResult":
        return cls(
            np.asarray(spec["weights"], dtype=np.float64),
            np.asarray(spec["vectors"], dtype=np.float64),
            float(spec["residual_fro"]),
            int(spec["candidates_kept"]),
            list(spec.get("starts", [])),
        )


def _prep_tensor(t) -> np.ndarray:
    arr = as_ndarray(t)
    if arr.ndim != 3 or len(set(arr.shape)) != 1:
        raise ShapeError(f"need a cubic order-3 tensor, got shape {arr.shape}")
    sym, asym = symmetrize3(arr)
    scale = max(1.0, float(np.max(np.abs(arr))))
    if asym > _REJECT_ASYM * scale:
        raise ValidationError(
            f"tensor is not symmetric (asymmetry {asym:.3g}); only symmetric "
            "decompositions are supported"
        )
    if asym > _SYM_TOL:
        return np.ascontiguousarray(sym)
    return np.ascontiguousarray(arr)


def _unit(v: np.ndarray) -> np.ndarray:
    nrm = float(np.linalg.norm(v))
    if nrm == 0.0:
        raise BreakdownError("zero vector cannot be normalized")
    return v / nrm


def tensor_value(t, u: np.ndarray) -> float:
    """T(u, u, u)."""
    arr = as_ndarray(t)
    return float(np.dot(u, kernels.tpi_contract(arr, u)))


def power_iteration(t, u0, n_iters: int = 100, tol: float = 1e-10):
    """Run power updates from a unit start.

    Returns (u, lam, iterations) where lam = T(u,u,u) at the final iterate;
    stops early once the update step drops below tol. Raises BreakdownError
    when the contraction vanishes (degenerate start).
    """
    arr = _prep_tensor(t)
    u0 = _unit(np.asarray(u0, dtype=np.float64))
    u, iters, _converged, broke = kernels.power_iterate(arr, u0, int(n_iters), float(tol))
    if broke:
        raise BreakdownError("power iteration hit a zero contraction T(I,u,u)")
    return u, tensor_value(arr, u), iters


def initialize(t, cfg: DecompConfig, start_index: int) -> np.ndarray:
    """Per-start unit initialization, seeded by (seed + start_index).

    random: uniform on the unit sphere. svd: top left singular vector of the
    slice combination T(I, I, theta) for a seeded random unit theta.
    """
    arr = as_ndarray(t)
    d = arr.shape[0]
    rng = np.random.default_rng(cfg.seed + start_index)
    v = rng.standard_normal(d)
    while float(np.linalg.norm(v)) == 0.0:
        v = rng.standard_normal(d)
    v = _unit(v)
    if cfg.init == "random":
        return v
    slice_comb = np.einsum("ijk,k->ij", arr, v)
    u_mat, _s, _vt = np.linalg.svd(slice_comb)
    return u_mat[:, 0]


def cluster(candidates, t, n_iters: int = 100, nu: float = 0.5, tol: float = 1e-10):
    """Greedy clustering of converged candidates.

    While candidates remain: refine the one maximizing |T(u,u,u)| with
    n_iters more power updates, emit the refined center, then drop the chosen
    candidate and every candidate with |<u, center>| > nu/2. The chosen one is
    dropped unconditionally so the loop always terminates.
    """
    arr = _prep_tensor(t)
    pool = [np.asarray(u, dtype=np.float64) for u in candidates]
    centers = []
    values = [abs(tensor_value(arr, u)) for u in pool]
    while pool:
        best = int(np.argmax(values))
        chosen = pool[best]
        refined, _iters, _conv, broke = kernels.power_iterate(
            arr, chosen, int(n_iters), float(tol)
        )
        keep_idx = []
        if not broke:
            centers.append(refined)
            for i, u in enumerate(pool):
                if i != best and abs(float(np.dot(u, refined))) <= nu / 2.0:
                    keep_idx.append(i)
        else:
            keep_idx = [i for i in range(len(pool)) if i != best]
        pool = [pool[i] for i in keep_idx]
        values = [values[i] for i in keep_idx]
    return centers


def _canonical_sign(v: np.ndarray, w: float) -> tuple[np.ndarray, float]:
    j = int(np.argmax(np.abs(v)))
    if v[j] < 0:
        return -v, -w
    return v, w


def _component_order(weights: np.ndarray, vectors) -> list[int]:
    """Order components by |weight| descending, stably under float noise.

    Relative weights are quantized before comparison and near-ties break
    lexicographically on the canonical vectors, so rescaling the input tensor
    cannot reorder equal-weight components.
    """
    absw = np.abs(weights)
    wmax = float(absw.max()) if absw.size else 0.0
    if wmax == 0.0:
        return list(range(len(vectors)))
    keys = [
        (-round(float(absw[i]) / wmax, 6), tuple(-vectors[i]))
        for i in range(len(vectors))
    ]
    return sorted(range(len(vectors)), key=keys.__getitem__)


def decompose(t, cfg: DecompConfig) -> DecompositionResult:
    """Multi-start power iteration + clustering, keeping the top-k centers.

    Deterministic for a fixed seed: start tau uses seed + tau. Raises
    PartialResultError (carrying what was found) when fewer than k distinct
    centers emerge.
    """
    arr = _prep_tensor(t)
    candidates = []
    starts = []
    for idx in range(cfg.n_inits):
        u0 = initialize(arr, cfg, idx)
        u, iters, converged, broke = kernels.power_iterate(
            arr, u0, cfg.n_iters, cfg.tol
        )
        starts.append(
            {"iterations": int(iters), "converged": bool(converged and not broke)}
        )
        if not broke:
            candidates.append(u)
    centers = cluster(candidates, arr, cfg.n_iters, cfg.nu, cfg.tol)
    weights = np.array([tensor_value(arr, u) for u in centers])
    canon = [_canonical_sign(u, float(w)) for u, w in zip(centers, weights)]
    order = _component_order(np.array([w for _v, w in canon]), [v for v, _w in canon])
    kept = len(centers)
    pairs = [canon[i] for i in order[: cfg.k]]
    vecs = np.array([p[0] for p in pairs]).reshape(len(pairs), arr.shape[0])
    wts = np.array([p[1] for p in pairs])
    if len(pairs):
        recon = rank1_sum(wts, vecs, 3).data
        residual = float(np.linalg.norm(arr - recon))
    else:
        residual = float(np.linalg.norm(arr))
    result = DecompositionResult(wts, vecs, residual, kept, starts)
    if len(pairs) < cfg.k:
        raise PartialResultError(
            f"found {len(pairs)} of {cfg.k} components", result=result
        )
    return result


@dataclass
class WhitenResult:
    """Whitening map W (W^T M2 W = I_k) and the unwhitening map back."""

    whitener: np.ndarray  # (d, k)
    unwhitener: np.ndarray  # (d, k): original-space u = unwhitener @ v
    eigenvalues: np.ndarray  # top-k eigenvalues of M2


def whiten(m2, k: int) -> WhitenResult:
    """Top-k eigenwhitening of a PSD second-moment matrix.

    W = U_k D_k^{-1/2} so that W^T M2 W = I_k; raises RankDeficiencyError
    when the k-th eigenvalue is below 1e-12 of the largest.
    """
    arr = as_ndarray(m2)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise ShapeError(f"m2 must be square, got {arr.shape}")
    if np.max(np.abs(arr - arr.T)) > 1e-8 * max(1.0, float(np.max(np.abs(arr)))):
        raise ValidationError("m2 must be symmetric")
    if not 1 <= k <= arr.shape[0]:
        raise ValidationError(f"k must be in 1..{arr.shape[0]}")
    sym = (arr + arr.T) / 2.0
    vals, vecs = np.linalg.eigh(sym)
    vals, vecs = vals[::-1], vecs[:, ::-1]
    lam_max = float(vals[0])
    if lam_max <= 0 or vals[k - 1] < 1e-12 * lam_max:
        raise RankDeficiencyError(
            f"moment matrix rank below {k} (eigenvalue {vals[k - 1]:.3g} "
            f"vs max {lam_max:.3g})"
        )
    top = vals[:k]
    u_k = vecs[:, :k]
    return WhitenResult(u_k / np.sqrt(top)[None, :], u_k * np.sqrt(top)[None, :], top)


def whitened_tensor(t, wres: WhitenResult) -> np.ndarray:
    """T(W, W, W): contract every mode with the whitener."""
    arr = as_ndarray(t)
    w = wres.whitener
    return np.einsum("jkl,ja,kb,lc->abc", arr, w, w, w)


def unwhiten_components(wres: WhitenResult, result: DecompositionResult):
    """Pull whitened components back to the original space as unit vectors."""
    raw = result.vectors @ wres.unwhitener.T
    out = np.empty_like(raw)
    for i, v in enumerate(raw):
        u, _w = _canonical_sign(_unit(v), 1.0)
        out[i] = u
    return out


def matrix_decompose(m, k: int):
    """Top-k eigenpairs of a symmetric matrix by |eigenvalue|.

    The matrix analogue of the tensor path (principal components);
    eigenvectors are sign-canonicalized.
    """
    arr = as_ndarray(m)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise ShapeError(f"need a square matrix, got {arr.shape}")
    if np.max(np.abs(arr - arr.T)) > 1e-8 * max(1.0, float(np.max(np.abs(arr)))):
        raise ValidationError("matrix must be symmetric")
    if not 1 <= k <= arr.shape[0]:
        raise ValidationError(f"k must be in 1..{arr.shape[0]}")
    sym = (arr + arr.T) / 2.0
    vals, vecs = np.linalg.eigh(sym)
    order = np.argsort(-np.abs(vals), kind="stable")
    out = []
    for idx in order[:k]:
        v = vecs[:, idx]
        j = int(np.argmax(np.abs(v)))
        if v[j] < 0:
            v = -v
        out.append((float(vals[idx]), v))
    return out
