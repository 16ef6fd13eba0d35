"""Generative input models and their higher-order score tensors.

Each model exposes analytic derivatives of its log-density (the L-route) and,
where the normalized density is available, analytic derivatives of the density
ratio grad^n p / p (the P-route). The order-m score tensor is computed two
independent ways:

* ``score``: the recursion  S_m = -S_{m-1} (x) grad log p - grad S_{m-1},
  expanded symbolically and evaluated with the analytic log-density
  derivatives;
* ``score_explicit``: the closed form  S_m = (-1)^m grad^m p / p  from the
  per-model density-ratio derivatives.

For the standard Gaussian both coincide with the multivariate probabilists'
Hermite tensors.
"""

from __future__ import annotations

import json
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

from ._expansions import evaluate_terms, logderiv_terms, score_terms
from ._kernels import kernels
from ._poly import poly_degree, poly_derive, poly_eval_batch, poly_simplify
from .config import LOG_DENSITY_FLOOR, MAX_AFFINE_CONDITION, MAX_TENSOR_ORDER
from .errors import (
    DegeneratePointError,
    FitError,
    ShapeError,
    UnsupportedVariantError,
    ValidationError,
)
from .tensor_core import DenseTensor

MAX_SCORE_ORDER = MAX_TENSOR_ORDER

_LETTERS = "abcdefgh"


def check_order(m) -> int:
    if not isinstance(m, (int, np.integer)):
        raise ValidationError(f"score order must be an integer, got {m!r}")
    m = int(m)
    if not 1 <= m <= MAX_SCORE_ORDER:
        raise ValidationError(f"score order must be in 1..{MAX_SCORE_ORDER}, got {m}")
    return m


def _check_point(x, dim: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.size != dim:
        raise ShapeError(f"point must be a vector of length {dim}, got shape {x.shape}")
    if not np.isfinite(x).all():
        raise ValidationError("point must be finite")
    return x


class DensityModel:
    """Base interface for generative input models.

    Models are immutable after construction; every evaluation is a pure
    function of (model, points), safe under concurrent readers.
    """

    dim: int
    normalized = True  # log_density is exact, not up to an additive constant
    supports_explicit = True  # density-ratio derivatives available

    def log_density_batch(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def logderiv_batch(self, x: np.ndarray, n: int) -> np.ndarray:
        """n-th derivative of log p at rows of x, flattened to (N, dim**n)."""
        raise NotImplementedError

    def ratio_deriv_batch(self, x: np.ndarray, n: int) -> np.ndarray:
        """(grad^n p / p) at rows of x, flattened to (N, dim**n)."""
        raise UnsupportedVariantError(
            f"{type(self).__name__} has no normalized density-ratio derivatives"
        )

    def logderivs_upto(self, x: np.ndarray, m: int) -> dict:
        return {n: self.logderiv_batch(x, n) for n in range(1, m + 1)}

    def ratio_derivs_upto(self, x: np.ndarray, m: int) -> dict:
        return {n: self.ratio_deriv_batch(x, n) for n in range(1, m + 1)}

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        raise UnsupportedVariantError(f"{type(self).__name__} has no sampler")


class StandardGaussian(DensityModel):
    """Zero-mean, identity-covariance Gaussian."""

    def __init__(self, dim: int):
        if int(dim) < 1:
            raise ValidationError("dimension must be positive")
        self.dim = int(dim)
        self._log_norm = -0.5 * self.dim * np.log(2.0 * np.pi)

    def log_density_batch(self, x):
        return self._log_norm - 0.5 * np.sum(x * x, axis=1)

    def logderiv_batch(self, x, n):
        n_samples, d = x.shape
        if n == 1:
            return -x.copy()
        if n == 2:
            return np.tile(-np.eye(d).ravel(), (n_samples, 1))
        return np.zeros((n_samples, d**n))

    def ratio_deriv_batch(self, x, n):
        h = kernels.hermite_flat(x, np.ones(self.dim), n)
        return h if n % 2 == 0 else -h

    def sample(self, n, rng):
        return rng.standard_normal((n, self.dim))

    def __repr__(self):
        return f"StandardGaussian(dim={self.dim})"


class GaussianMixture(DensityModel):
    """Mixture of Gaussians with shared identity or per-component diagonal
    covariances. Means are stored as rows; ``mixing_matrix`` exposes them as
    columns for the posterior-mean identity S_1(x) = x - A E[h|x]."""

    def __init__(self, weights, means, variances=None):
        weights = np.asarray(weights, dtype=np.float64)
        means = np.atleast_2d(np.asarray(means, dtype=np.float64))
        if weights.ndim != 1 or weights.size != means.shape[0]:
            raise ValidationError("need one weight per component mean")
        if np.any(weights <= 0):
            raise ValidationError("mixture weights must be positive")
        if abs(weights.sum() - 1.0) > 1e-12:
            raise ValidationError(f"mixture weights sum to {weights.sum()}, not 1")
        if variances is None:
            variances = np.ones_like(means)
        else:
            variances = np.atleast_2d(np.asarray(variances, dtype=np.float64))
            if variances.shape != means.shape:
                raise ValidationError("variances must match means in shape")
            if np.any(variances <= 0):
                raise ValidationError("variances must be positive")
        self.weights = weights
        self.means = means
        self.variances = variances
        self.dim = means.shape[1]
        self._log_weights = np.log(weights)
        self._inv_var = 1.0 / variances
        self._comp_log_norm = -0.5 * np.sum(np.log(2.0 * np.pi * variances), axis=1)

    @property
    def n_components(self) -> int:
        return self.means.shape[0]

    @property
    def mixing_matrix(self) -> np.ndarray:
        return self.means.T

    def component_log_density(self, x):
        diff = x[:, None, :] - self.means[None, :, :]
        quad = np.sum(diff * diff * self._inv_var[None, :, :], axis=2)
        return self._comp_log_norm[None, :] - 0.5 * quad

    def log_density_batch(self, x):
        return logsumexp(self._log_weights[None, :] + self.component_log_density(x), axis=1)

    def posterior_batch(self, x):
        a = self._log_weights[None, :] + self.component_log_density(x)
        a -= a.max(axis=1, keepdims=True)
        r = np.exp(a)
        return r / r.sum(axis=1, keepdims=True)

    def ratio_derivs_upto(self, x, m):
        r = self.posterior_batch(x)
        out = {}
        for n in range(1, m + 1):
            acc = np.zeros((x.shape[0], self.dim**n))
            for j in range(self.n_components):
                h = kernels.hermite_flat(x - self.means[j], self._inv_var[j], n)
                acc += r[:, j : j + 1] * h
            out[n] = acc if n % 2 == 0 else -acc
        return out

    def ratio_deriv_batch(self, x, n):
        return self.ratio_derivs_upto(x, n)[n]

    def logderivs_upto(self, x, m):
        ratios = self.ratio_derivs_upto(x, m)
        return {
            n: evaluate_terms(logderiv_terms(n), ratios, x.shape[0], self.dim)
            for n in range(1, m + 1)
        }

    def logderiv_batch(self, x, n):
        return self.logderivs_upto(x, n)[n]

    def sample(self, n, rng):
        comps = rng.choice(self.n_components, size=n, p=self.weights)
        z = rng.standard_normal((n, self.dim))
        return self.means[comps] + np.sqrt(self.variances[comps]) * z

    def __repr__(self):
        return f"GaussianMixture(k={self.n_components}, dim={self.dim})"


class ExpFamily(DensityModel):
    """Exponential-family model p(x) ~ exp(-E(x)) with a polynomial energy.

    The normalizer is unknown: ``log_density_batch`` returns -E(x), i.e. the
    log-density up to an additive constant (``normalized`` is False). The
    log-density derivatives are exact since the constant drops out, so the
    score recursion applies; the explicit density-ratio route does not.
    Integrability of exp(-E) is the caller's responsibility.
    """

    normalized = False
    supports_explicit = False

    def __init__(self, dim: int, energy_terms):
        if int(dim) < 1:
            raise ValidationError("dimension must be positive")
        self.dim = int(dim)
        terms = []
        for coeff, powers in energy_terms:
            powers = tuple(int(e) for e in powers)
            if len(powers) != self.dim or any(e < 0 for e in powers):
                raise ValidationError(f"bad exponent vector {powers}")
            terms.append((float(coeff), powers))
        self.energy_terms = poly_simplify(terms)
        if poly_degree(self.energy_terms) > 6:
            raise ValidationError("energy polynomial degree is capped at 6")
        self._deriv_levels = [[self.energy_terms]]

    def _energy_entries(self, n: int):
        """Flat row-major entries of grad^n E as monomial lists."""
        while len(self._deriv_levels) <= n:
            prev = self._deriv_levels[-1]
            nxt = []
            for entry in prev:
                for axis in range(self.dim):
                    nxt.append(poly_derive(entry, axis))
            self._deriv_levels.append(nxt)
        return self._deriv_levels[n]

    def log_density_batch(self, x):
        return -poly_eval_batch(self.energy_terms, x)

    def logderiv_batch(self, x, n):
        entries = self._energy_entries(n)
        out = np.empty((x.shape[0], len(entries)))
        for pos, entry in enumerate(entries):
            out[:, pos] = -poly_eval_batch(entry, x)
        return out

    def __repr__(self):
        return f"ExpFamily(dim={self.dim}, terms={len(self.energy_terms)})"


class AffineTransformed(DensityModel):
    """Distribution of t = A x + b for x drawn from a base model.

    The Jacobian determinant is constant, so it shifts the log-density but
    drops from all its derivatives; derivatives chain through inv(A) applied
    to every tensor mode.
    """

    def __init__(self, base: DensityModel, matrix, shift):
        matrix = np.asarray(matrix, dtype=np.float64)
        shift = np.asarray(shift, dtype=np.float64)
        d = base.dim
        if matrix.shape != (d, d):
            raise ShapeError(f"matrix must be {d}x{d}, got {matrix.shape}")
        if shift.shape != (d,):
            raise ShapeError(f"shift must have length {d}")
        if not np.isfinite(matrix).all() or not np.isfinite(shift).all():
            raise ValidationError("matrix and shift must be finite")
        cond = np.linalg.cond(matrix)
        if not np.isfinite(cond) or cond >= MAX_AFFINE_CONDITION:
            raise ValidationError(
                f"matrix is singular or ill-conditioned (cond={cond:.3g})"
            )
        self.base = base
        self.matrix = matrix
        self.shift = shift
        self.dim = d
        self.normalized = base.normalized
        self.supports_explicit = base.supports_explicit
        self._inv = np.linalg.inv(matrix)
        sign, logdet = np.linalg.slogdet(self._inv)
        self._log_det_inv = float(logdet)

    def _pullback(self, t):
        return (t - self.shift[None, :]) @ self._inv.T

    def _push_modes(self, flat, n, n_samples):
        """Contract every mode of base-space tensors with inv(A)."""
        src = flat.reshape((n_samples,) + (self.dim,) * n)
        in_sub = "n" + _LETTERS[:n]
        out_sub = "n" + _LETTERS[4 : 4 + n]
        mats = ",".join(_LETTERS[i] + _LETTERS[4 + i] for i in range(n))
        out = np.einsum(f"{in_sub},{mats}->{out_sub}", src, *([self._inv] * n))
        return out.reshape(n_samples, self.dim**n)

    def log_density_batch(self, t):
        return self.base.log_density_batch(self._pullback(t)) + self._log_det_inv

    def logderivs_upto(self, t, m):
        x = self._pullback(t)
        base = self.base.logderivs_upto(x, m)
        return {n: self._push_modes(base[n], n, t.shape[0]) for n in base}

    def logderiv_batch(self, t, n):
        return self.logderivs_upto(t, n)[n]

    def ratio_derivs_upto(self, t, m):
        x = self._pullback(t)
        base = self.base.ratio_derivs_upto(x, m)
        return {n: self._push_modes(base[n], n, t.shape[0]) for n in base}

    def ratio_deriv_batch(self, t, n):
        return self.ratio_derivs_upto(t, n)[n]

    def sample(self, n, rng):
        return self.base.sample(n, rng) @ self.matrix.T + self.shift

    def __repr__(self):
        return f"AffineTransformed({self.base!r})"


def guard_degenerate(model: DensityModel, x: np.ndarray, row_offset: int = 0) -> None:
    """Raise if the (possibly unnormalized) density underflows at any row."""
    logp = model.log_density_batch(x)
    bad = np.flatnonzero(logp < LOG_DENSITY_FLOOR)
    if bad.size:
        idx = int(bad[0]) + row_offset
        raise DegeneratePointError(
            f"density underflow at sample row {idx} (log density {logp[bad[0]]:.1f})",
            row_index=idx,
        )


def log_density(model: DensityModel, x) -> float:
    """log p(x); for unnormalized models, log p(x) plus an unknown constant."""
    x = _check_point(x, model.dim)
    guard_degenerate(model, x[None, :])
    return float(model.log_density_batch(x[None, :])[0])


def score_batch(model: DensityModel, x: np.ndarray, m: int, row_offset: int = 0):
    """Order-m score tensors at rows of x, flattened to (N, dim**m).

    Uses the explicit density-ratio route when the model supports it, else
    the recursion on log-density derivatives.
    """
    guard_degenerate(model, x, row_offset)
    if model.supports_explicit:
        pm = model.ratio_deriv_batch(x, m)
        return pm if m % 2 == 0 else -pm
    logs = model.logderivs_upto(x, m)
    return evaluate_terms(score_terms(m), logs, x.shape[0], model.dim)


def score(model: DensityModel, x, m: int) -> DenseTensor:
    """Order-m score tensor via the recursion on log-density derivatives."""
    m = check_order(m)
    x = _check_point(x, model.dim)
    xb = x[None, :]
    guard_degenerate(model, xb)
    logs = model.logderivs_upto(xb, m)
    flat = evaluate_terms(score_terms(m), logs, 1, model.dim)
    return DenseTensor(flat[0].reshape((model.dim,) * m), copy=False)


def score_explicit(model: DensityModel, x, m: int) -> DenseTensor:
    """Order-m score tensor via (-1)^m grad^m p / p (normalized models only)."""
    m = check_order(m)
    x = _check_point(x, model.dim)
    if not model.supports_explicit:
        raise UnsupportedVariantError(
            f"explicit score unsupported for {type(model).__name__}"
        )
    xb = x[None, :]
    guard_degenerate(model, xb)
    pm = model.ratio_deriv_batch(xb, m)[0]
    val = pm if m % 2 == 0 else -pm
    return DenseTensor(val.reshape((model.dim,) * m), copy=False)


def hermite(x, m: int) -> DenseTensor:
    """Multivariate probabilists' Hermite tensor: H_1 = x, H_2 = xx^T - I, ..."""
    m = check_order(m)
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ShapeError("hermite expects a vector")
    d = x.size
    flat = kernels.hermite_flat(x[None, :], np.ones(d), m)[0]
    return DenseTensor(flat.reshape((d,) * m), copy=False)


def gmm_posterior(model: GaussianMixture, x) -> np.ndarray:
    """Component responsibilities p(h|x); sums to 1."""
    if not isinstance(model, GaussianMixture):
        raise UnsupportedVariantError("gmm_posterior needs a GaussianMixture")
    x = _check_point(x, model.dim)
    guard_degenerate(model, x[None, :])
    return model.posterior_batch(x[None, :])[0]


def parametric_score_gaussian_mean(x, mu, m: int) -> DenseTensor:
    """Order-m parametric score in the mean of an identity-covariance Gaussian.

    Pinned to the contrast convention: it equals the input-space score of the
    mean-mu model, i.e. the Hermite tensor of (x - mu). In particular the
    first order is x - mu and at mu = 0 all orders coincide with the standard
    Gaussian score.
    """
    m = check_order(m)
    x = np.asarray(x, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    if x.shape != mu.shape or x.ndim != 1:
        raise ShapeError("x and mu must be vectors of equal length")
    return hermite(x - mu, m)


def transform_score_affine(model: DensityModel, matrix, shift, t, m: int) -> DenseTensor:
    """Score of the affinely transformed variable A x + b at a point of the
    transformed space. The Jacobian term is constant and drops out."""
    return score(AffineTransformed(model, matrix, shift), t, m)


def selftaught_refit_weights(
    model: GaussianMixture,
    target_x,
    tol: float = 1e-10,
    max_iter: int = 500,
) -> np.ndarray:
    """Re-fit mixture weights on target inputs with components frozen.

    Weights-only EM: responsibilities under current weights, then weights
    become the mean responsibility. Returns weights summing to 1.
    """
    if not isinstance(model, GaussianMixture):
        raise UnsupportedVariantError("weight refit needs a GaussianMixture")
    x = np.asarray(target_x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 1 or x.shape[1] != model.dim:
        raise ShapeError(f"target samples must be (N, {model.dim})")
    comp = model.component_log_density(x)
    if np.all(logsumexp(comp, axis=1) + np.log(1.0 / model.n_components) < LOG_DENSITY_FLOOR):
        raise FitError("all target samples are degenerate under every component")
    w = model.weights.copy()
    for _ in range(max_iter):
        a = np.log(np.maximum(w, 1e-300))[None, :] + comp
        a -= a.max(axis=1, keepdims=True)
        r = np.exp(a)
        r /= r.sum(axis=1, keepdims=True)
        w_new = r.mean(axis=0)
        if np.max(np.abs(w_new - w)) < tol:
            w = w_new
            break
        w = w_new
    return w / w.sum()


# ---------------------------------------------------------------------------
# JSON model descriptions


def model_to_dict(model: DensityModel) -> dict:
    if isinstance(model, StandardGaussian):
        return {"type": "gaussian", "dim": model.dim}
    if isinstance(model, GaussianMixture):
        out = {
            "type": "gmm",
            "weights": model.weights.tolist(),
            "means": model.means.tolist(),
        }
        if np.all(model.variances == 1.0):
            out["variances"] = None
        else:
            out["variances"] = model.variances.tolist()
        return out
    if isinstance(model, ExpFamily):
        return {
            "type": "exp_family",
            "dim": model.dim,
            "energy": [
                {"coeff": c, "powers": list(p)} for c, p in model.energy_terms
            ],
        }
    if isinstance(model, AffineTransformed):
        return {
            "type": "affine",
            "base": model_to_dict(model.base),
            "matrix": model.matrix.tolist(),
            "shift": model.shift.tolist(),
        }
    raise UnsupportedVariantError(f"cannot serialize {type(model).__name__}")


def model_from_dict(spec: dict) -> DensityModel:
    if not isinstance(spec, dict) or "type" not in spec:
        raise ValidationError("model description must be an object with a 'type'")
    kind = spec["type"]
    try:
        if kind == "gaussian":
            return StandardGaussian(spec["dim"])
        if kind == "gmm":
            return GaussianMixture(
                spec["weights"], spec["means"], spec.get("variances")
            )
        if kind == "exp_family":
            return ExpFamily(
                spec["dim"],
                [(t["coeff"], tuple(t["powers"])) for t in spec["energy"]],
            )
        if kind == "affine":
            return AffineTransformed(
                model_from_dict(spec["base"]), spec["matrix"], spec["shift"]
            )
    except KeyError as exc:
        raise ValidationError(f"model description missing field {exc}") from exc
    raise ValidationError(f"unknown model type {kind!r}")


def load_model(path) -> DensityModel:
    return model_from_dict(json.loads(Path(path).read_text()))


def save_model(path, model: DensityModel) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model), indent=2) + "\n")
