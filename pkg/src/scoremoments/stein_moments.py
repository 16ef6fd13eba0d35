"""Cross-moments with labels, expected-derivative oracles, and the numerical
verification of higher-order Stein identities.

The central identity: for labels with conditional mean G(x) and input score
tensors S_m(x), E[y (x) S_m(x)] = E[grad^m G(x)]. Cross-moments estimate the
left side from samples; the right side comes from analytic Gaussian moments,
tensor-product Gauss-Hermite quadrature, or Monte Carlo.

Sample reductions are chunked pairwise (fixed tree, chunk 4096), so a moment
is bit-identical run to run however the accumulation is split.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from itertools import permutations as _permutations
from pathlib import Path

import numpy as np
from numpy.polynomial.hermite_e import hermegauss

from ._kernels import kernels
from ._poly import (
    linear_power_terms,
    poly_degree,
    poly_derive,
    poly_eval_batch,
    poly_simplify,
)
from .config import QUAD_MAX_DIM, QUAD_NODES, REDUCTION_CHUNK
from .errors import (
    DegeneratePointError,
    ShapeError,
    UnsupportedVariantError,
    ValidationError,
)
from .score_models import (
    AffineTransformed,
    DensityModel,
    GaussianMixture,
    StandardGaussian,
    check_order,
    score_batch,
)
from .tensor_core import DenseTensor


@dataclass
class LabeledDataset:
    """Rows of (x, y) samples; scalar labels as a 1-d Y, vector labels (N, p)."""

    X: np.ndarray
    Y: np.ndarray

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.Y = np.asarray(self.Y, dtype=np.float64)
        if self.X.ndim != 2 or self.X.shape[0] < 1:
            raise ValidationError("X must be a non-empty (N, d) matrix")
        if self.Y.ndim not in (1, 2) or self.Y.shape[0] != self.X.shape[0]:
            raise ValidationError("Y must be (N,) or (N, p) matching X rows")
        if not np.isfinite(self.X).all() or not np.isfinite(self.Y).all():
            raise ValidationError("dataset entries must be finite")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    @property
    def label_order(self) -> int:
        return self.Y.ndim - 1

    @property
    def label_dim(self) -> int:
        return 1 if self.Y.ndim == 1 else self.Y.shape[1]

    def to_csv(self, path) -> None:
        y = self.Y[:, None] if self.Y.ndim == 1 else self.Y
        header = ",".join(
            [f"x{i + 1}" for i in range(self.dim)]
            + [f"y{j + 1}" for j in range(y.shape[1])]
        )
        np.savetxt(
            path,
            np.hstack([self.X, y]),
            delimiter=",",
            header=header,
            comments="",
            fmt="%.17g",
        )

    @classmethod
    def from_csv(cls, path) -> "LabeledDataset":
        with open(path) as fh:
            header = fh.readline().strip()
        names = [c.strip() for c in header.split(",")]
        n_x = sum(1 for c in names if c.startswith("x"))
        n_y = sum(1 for c in names if c.startswith("y"))
        if n_x < 1 or n_x + n_y != len(names):
            raise ValidationError(f"bad dataset header {header!r}")
        raw = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        if raw.shape[1] != len(names):
            raise ValidationError("column count does not match header")
        x = raw[:, :n_x]
        if n_y == 0:
            raise ValidationError("dataset has no label columns")
        y = raw[:, n_x:]
        if n_y == 1:
            y = y[:, 0]
        return cls(x, y)


class PolyFunction:
    """Vector-valued polynomial label function with analytic derivatives.

    ``output_dim == 1`` is treated as a scalar function everywhere: labels
    are 1-d and derivative tensors drop the label mode.
    """

    def __init__(self, dim: int, terms, output_dim: int = 1):
        self.dim = int(dim)
        self.output_dim = int(output_dim)
        if self.dim < 1 or self.output_dim < 1:
            raise ValidationError("dim and output_dim must be positive")
        by_output = [[] for _ in range(self.output_dim)]
        for out_idx, coeff, powers in terms:
            out_idx = int(out_idx)
            if not 0 <= out_idx < self.output_dim:
                raise ValidationError(f"output index {out_idx} out of range")
            powers = tuple(int(e) for e in powers)
            if len(powers) != self.dim or any(e < 0 for e in powers):
                raise ValidationError(f"bad exponent vector {powers}")
            by_output[out_idx].append((float(coeff), powers))
        self._by_output = [poly_simplify(ts) for ts in by_output]
        if any(poly_degree(ts) > 6 for ts in self._by_output):
            raise ValidationError("total degree is capped at 6")
        self._deriv_cache: dict[int, list] = {}

    @property
    def degree(self) -> int:
        return max(poly_degree(ts) for ts in self._by_output)

    @property
    def scalar(self) -> bool:
        return self.output_dim == 1

    def evaluate_batch(self, x: np.ndarray) -> np.ndarray:
        """(N, d) -> (N,) for scalar functions, else (N, p)."""
        x = np.asarray(x, dtype=np.float64)
        out = np.empty((x.shape[0], self.output_dim))
        for o, ts in enumerate(self._by_output):
            out[:, o] = poly_eval_batch(ts, x)
        return out[:, 0] if self.scalar else out

    def evaluate(self, x) -> float | np.ndarray:
        val = self.evaluate_batch(np.asarray(x, dtype=np.float64)[None, :])
        return float(val[0]) if self.scalar else val[0]

    def derivative_entries(self, m: int) -> list:
        """Row-major flat entries of grad^m, one monomial list per entry, per output."""
        if m not in self._deriv_cache:
            level = [[ts] for ts in self._by_output]
            for _ in range(m):
                nxt = []
                for entries in level:
                    new_entries = []
                    for entry in entries:
                        for axis in range(self.dim):
                            new_entries.append(poly_derive(entry, axis))
                    nxt.append(new_entries)
                level = nxt
            self._deriv_cache[m] = level
        return self._deriv_cache[m]

    def derivative_values(self, x: np.ndarray, m: int) -> np.ndarray:
        """grad^m at rows of x: (N, p, d**m); label mode kept even for scalars."""
        x = np.asarray(x, dtype=np.float64)
        entries = self.derivative_entries(m)
        out = np.empty((x.shape[0], self.output_dim, self.dim**m))
        for o, ents in enumerate(entries):
            for pos, entry in enumerate(ents):
                out[:, o, pos] = poly_eval_batch(entry, x)
        return out

    def to_dict(self) -> dict:
        return {
            "dim": self.dim,
            "output_dim": self.output_dim,
            "terms": [
                {"output": o, "coeff": c, "powers": list(p)}
                for o, ts in enumerate(self._by_output)
                for c, p in ts
            ],
        }

    @classmethod
    def from_dict(cls, spec: dict) -> "PolyFunction":
        try:
            terms = [(t["output"], t["coeff"], tuple(t["powers"])) for t in spec["terms"]]
            return cls(spec["dim"], terms, spec.get("output_dim", 1))
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"bad polynomial description: {exc}") from exc

    @classmethod
    def load(cls, path) -> "PolyFunction":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def from_planted(cls, components, link: str, dim: int) -> "PolyFunction":
        """Scalar G(x) = sum_j link(u_j . x) for planted unit components."""
        powers = {"identity": (1,), "square": (2,), "cube": (3,), "square_plus_cube": (2, 3)}
        if link not in powers:
            raise ValidationError(f"unknown planted link {link!r}")
        terms = []
        for u in np.atleast_2d(np.asarray(components, dtype=np.float64)):
            for p in powers[link]:
                terms.extend((0, c, e) for c, e in linear_power_terms(u, p))
        if not terms:
            terms = [(0, 0.0, (0,) * dim)]
        return cls(dim, terms, 1)

    @classmethod
    def random(cls, rng, dim: int, degree: int = 3, output_dim: int = 1) -> "PolyFunction":
        """Random dense polynomial with all monomials of total degree <= degree."""
        from itertools import combinations_with_replacement

        terms = []
        for o in range(output_dim):
            for deg in range(degree + 1):
                for combo in combinations_with_replacement(range(dim), deg):
                    exps = [0] * dim
                    for i in combo:
                        exps[i] += 1
                    terms.append((o, float(rng.uniform(-1.0, 1.0)), tuple(exps)))
        return cls(dim, terms, output_dim)


@dataclass
class MomentEstimate:
    """Empirical moment with entrywise standard errors."""

    value: DenseTensor
    std_error: DenseTensor
    n: int


def _tree_reduce(partials: list[np.ndarray]) -> np.ndarray:
    return kernels.fold_sum(np.stack(partials, axis=0))


def cross_moment(data: LabeledDataset, model: DensityModel, m: int) -> MomentEstimate:
    """(1/N) sum_i y_i (x) S_m(x_i) with entrywise standard errors.

    Output order is label order + m (label modes first); deterministic for a
    fixed dataset regardless of how accumulation is chunked.
    """
    m = check_order(m)
    if data.dim != model.dim:
        raise ShapeError(f"data dim {data.dim} != model dim {model.dim}")
    n, d = data.n, data.dim
    scalar = data.label_order == 0
    p = data.label_dim
    f = d**m
    partials, partials_sq = [], []
    for start in range(0, n, REDUCTION_CHUNK):
        stop = min(start + REDUCTION_CHUNK, n)
        s = score_batch(model, data.X[start:stop], m, row_offset=start)
        if scalar:
            z = data.Y[start:stop, None] * s
        else:
            z = (data.Y[start:stop, :, None] * s[:, None, :]).reshape(stop - start, p * f)
        partials.append(kernels.fold_sum(z))
        partials_sq.append(kernels.fold_sum(z * z))
    total = _tree_reduce(partials)
    total_sq = _tree_reduce(partials_sq)
    mean = total / n
    if n > 1:
        var = (total_sq - n * mean * mean) / (n - 1)
        se = np.sqrt(np.maximum(var, 0.0) / n)
    else:
        se = np.zeros_like(mean)
    shape = (d,) * m if scalar else (p,) + (d,) * m
    return MomentEstimate(
        DenseTensor(mean.reshape(shape), copy=False),
        DenseTensor(se.reshape(shape), copy=False),
        n,
    )


# ---------------------------------------------------------------------------
# Expected derivatives of polynomial label functions


def _gaussian_moment_1d(mu: float, var: float, e: int) -> float:
    """E[x**e] for x ~ N(mu, var), by the raw-moment recurrence."""
    if e == 0:
        return 1.0
    prev, cur = 1.0, mu
    for k in range(2, e + 1):
        prev, cur = cur, mu * cur + (k - 1) * var * prev
    return cur


def _monomial_expectation(model: DensityModel, powers) -> float:
    if isinstance(model, StandardGaussian):
        out = 1.0
        for e in powers:
            out *= _gaussian_moment_1d(0.0, 1.0, e)
        return out
    if isinstance(model, GaussianMixture):
        out = 0.0
        for j in range(model.n_components):
            term = model.weights[j]
            for i, e in enumerate(powers):
                term *= _gaussian_moment_1d(model.means[j, i], model.variances[j, i], e)
            out += term
        return out
    raise UnsupportedVariantError(
        f"analytic moments unavailable for {type(model).__name__}"
    )


def _poly_expectation(model: DensityModel, terms) -> float:
    return sum(c * _monomial_expectation(model, p) for c, p in terms)


def model_quadrature(model: DensityModel) -> tuple[np.ndarray, np.ndarray]:
    """Tensor-product Gauss-Hermite points/weights integrating against the model.

    Exact for polynomial integrands up to degree 2*QUAD_NODES - 1 per
    coordinate; capped at QUAD_MAX_DIM dimensions.
    """
    d = model.dim
    if d > QUAD_MAX_DIM:
        raise UnsupportedVariantError(
            f"quadrature capped at dim {QUAD_MAX_DIM}, model has {d}"
        )
    nodes1, weights1 = hermegauss(QUAD_NODES)
    weights1 = weights1 / math.sqrt(2.0 * math.pi)
    grids = np.meshgrid(*([nodes1] * d), indexing="ij")
    base_pts = np.stack([g.ravel() for g in grids], axis=1)
    wgrids = np.meshgrid(*([weights1] * d), indexing="ij")
    base_w = np.ones(base_pts.shape[0])
    for g in wgrids:
        base_w = base_w * g.ravel()
    if isinstance(model, StandardGaussian):
        return base_pts, base_w
    if isinstance(model, GaussianMixture):
        pts, wts = [], []
        for j in range(model.n_components):
            pts.append(model.means[j] + np.sqrt(model.variances[j]) * base_pts)
            wts.append(model.weights[j] * base_w)
        return np.vstack(pts), np.concatenate(wts)
    if isinstance(model, AffineTransformed):
        bpts, bwts = model_quadrature(model.base)
        return bpts @ model.matrix.T + model.shift, bwts
    raise UnsupportedVariantError(
        f"no quadrature rule for {type(model).__name__}"
    )


def expected_derivative(
    g: PolyFunction,
    model: DensityModel,
    m: int,
    method: str = "analytic",
    n_samples: int = 100_000,
    seed: int = 0,
) -> DenseTensor:
    """E[grad^m G(x)] as an order (label order + m) tensor.

    Methods: "analytic" (Gaussian/GMM closed-form moments), "quadrature"
    (tensor-product Gauss-Hermite, dim <= 3), "mc" (Monte Carlo with the
    deterministic chunked reduction).
    """
    m = check_order(m)
    if g.dim != model.dim:
        raise ShapeError(f"function dim {g.dim} != model dim {model.dim}")
    d, p = model.dim, g.output_dim
    entries = g.derivative_entries(m)
    if method == "analytic":
        flat = np.empty((p, d**m))
        for o, ents in enumerate(entries):
            for pos, entry in enumerate(ents):
                flat[o, pos] = _poly_expectation(model, entry)
    elif method == "quadrature":
        pts, wts = model_quadrature(model)
        vals = g.derivative_values(pts, m)
        flat = np.einsum("q,qpf->pf", wts, vals)
    elif method == "mc":
        rng = np.random.default_rng(seed)
        x = model.sample(n_samples, rng)
        partials = []
        for start in range(0, n_samples, REDUCTION_CHUNK):
            vals = g.derivative_values(x[start : start + REDUCTION_CHUNK], m)
            partials.append(kernels.fold_sum(vals.reshape(vals.shape[0], -1)))
        flat = (_tree_reduce(partials) / n_samples).reshape(p, d**m)
    else:
        raise ValidationError(f"unknown method {method!r}")
    shape = (d,) * m if g.scalar else (p,) + (d,) * m
    return DenseTensor(flat.reshape(shape), copy=False)


# ---------------------------------------------------------------------------
# Stein identity verification


@dataclass
class SteinReport:
    """Worst-case gap between a cross-moment and its derivative oracle."""

    max_abs_gap: float
    max_gap_std_errors: float
    n_samples: int
    moment: MomentEstimate
    oracle: DenseTensor

    @property
    def passed(self) -> bool:
        return self.max_gap_std_errors <= 5.0


def _gap_report(est: MomentEstimate, oracle: DenseTensor) -> SteinReport:
    gap = np.abs(est.value.data - oracle.data)
    se = est.std_error.data
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(se > 0, gap / np.where(se > 0, se, 1.0), np.where(gap <= 1e-12, 0.0, np.inf))
    return SteinReport(
        float(gap.max()), float(ratio.max()), est.n, est, oracle
    )


def _auto_oracle(model: DensityModel) -> str:
    if isinstance(model, (StandardGaussian, GaussianMixture)):
        return "analytic"
    return "quadrature"


def stein_residual(
    model: DensityModel,
    g: PolyFunction,
    m: int,
    n_samples: int = 100_000,
    seed: int = 0,
    oracle: str = "auto",
) -> SteinReport:
    """Monte-Carlo check of E[G(x) (x) S_m(x)] = E[grad^m G(x)].

    Samples x from the model, forms the cross-moment with y = G(x), and
    compares entrywise against the analytic/quadrature oracle in units of the
    moment's standard errors.
    """
    m = check_order(m)
    rng = np.random.default_rng(seed)
    x = model.sample(n_samples, rng)
    y = g.evaluate_batch(x)
    est = cross_moment(LabeledDataset(x, y), model, m)
    method = _auto_oracle(model) if oracle == "auto" else oracle
    rhs = expected_derivative(g, model, m, method=method)
    return _gap_report(est, rhs)


def parametric_stein_residual(
    mu0,
    g0: PolyFunction,
    m: int,
    n_samples: int = 100_000,
    seed: int = 0,
) -> SteinReport:
    """Check of the parametric identity at theta0 = mu0 for an
    identity-covariance Gaussian mean parameter and G(x; mu) = G0(x - mu).

    Samples x ~ N(mu0, I); the parametric score tensors equal the Hermite
    tensors of the contrast z = x - mu0, and the mu-derivatives of G reduce to
    z-derivatives of G0, so the check runs on the contrast variable. At
    mu0 = 0 it is numerically identical to the non-parametric check with the
    same seed.
    """
    m = check_order(m)
    mu0 = np.asarray(mu0, dtype=np.float64)
    if mu0.ndim != 1:
        raise ShapeError("mu0 must be a vector")
    d = mu0.size
    base = StandardGaussian(d)
    rng = np.random.default_rng(seed)
    x = base.sample(n_samples, rng) + mu0[None, :]
    z = x - mu0[None, :]
    y = g0.evaluate_batch(z)
    est = cross_moment(LabeledDataset(z, y), base, m)
    rhs = expected_derivative(g0, base, m, method="analytic")
    return _gap_report(est, rhs)


def permutation_delta(d: int, m: int) -> np.ndarray:
    """Entry (i1..im, j1..jm) = sum over permutations s of prod_a delta(i_a, j_s(a)).

    The Gaussian-measure inner product of two order-m Hermite tensors.
    """
    letters_i = _ascii(0, m)
    letters_j = _ascii(m, m)
    eye = np.eye(d)
    out = np.zeros((d,) * (2 * m))
    for perm in _permutations(range(m)):
        subs = ",".join(letters_i[a] + letters_j[perm[a]] for a in range(m))
        out += np.einsum(f"{subs}->{''.join(letters_i + letters_j)}", *([eye] * m))
    return out


def _ascii(start: int, count: int) -> list[str]:
    return [chr(ord("a") + start + i) for i in range(count)]
