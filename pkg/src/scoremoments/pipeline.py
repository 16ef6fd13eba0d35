"""End-to-end orchestration: synthetic data, cross-moments, decomposition,
feature extraction, and self-taught weight transfer.

A pipeline run is fully determined by its config and seed: data generation,
moment accumulation, and decomposition all derive their randomness from the
config seed, and every written artifact except the wall-clock timings is
bit-identical across repeated runs.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._kernels import BACKEND_NAME
from .errors import UnsupportedVariantError, ValidationError
from .score_models import (
    DensityModel,
    GaussianMixture,
    model_from_dict,
    model_to_dict,
    selftaught_refit_weights,
)
from .spectral_decomp import (
    DecompConfig,
    DecompositionResult,
    decompose,
    matrix_decompose,
    tensor_value,
    unwhiten_components,
    whiten,
    whitened_tensor,
)
from .stein_moments import (
    LabeledDataset,
    PolyFunction,
    cross_moment,
    expected_derivative,
)
from .tensor_core import write_tensor

_SIGMAS = {
    "identity": lambda t: t,
    "tanh": np.tanh,
    "logistic": lambda t: 1.0 / (1.0 + np.exp(-t)),
    "relu": lambda t: np.maximum(t, 0.0),
}

PLANTED_LINKS = ("identity", "square", "cube", "square_plus_cube")


@dataclass
class LabelSpec:
    """Label generator: an explicit polynomial, or planted unit components
    combined through a polynomial link, plus independent Gaussian noise."""

    poly: PolyFunction | None = None
    planted: np.ndarray | None = None  # (k, d) unit rows
    link: str = "cube"
    noise_sigma: float = 0.1

    def __post_init__(self):
        if (self.poly is None) == (self.planted is None):
            raise ValidationError(
                "give exactly one of a polynomial or planted components"
            )
        if self.noise_sigma < 0:
            raise ValidationError("noise sigma must be >= 0")
        if self.planted is not None:
            self.planted = np.atleast_2d(np.asarray(self.planted, dtype=np.float64))
            norms = np.linalg.norm(self.planted, axis=1)
            if np.any(np.abs(norms - 1.0) > 1e-9):
                raise ValidationError("planted components must be unit vectors")
            if self.link not in PLANTED_LINKS:
                raise ValidationError(f"unknown link {self.link!r}")

    def to_poly(self, dim: int) -> PolyFunction:
        if self.poly is not None:
            return self.poly
        return PolyFunction.from_planted(self.planted, self.link, dim)

    def to_dict(self) -> dict:
        if self.poly is not None:
            return {
                "type": "poly",
                "function": self.poly.to_dict(),
                "noise_sigma": self.noise_sigma,
            }
        return {
            "type": "planted",
            "components": self.planted.tolist(),
            "link": self.link,
            "noise_sigma": self.noise_sigma,
        }

    @classmethod
    def from_dict(cls, spec: dict) -> "LabelSpec":
        kind = spec.get("type")
        if kind == "poly":
            return cls(
                poly=PolyFunction.from_dict(spec["function"]),
                noise_sigma=spec.get("noise_sigma", 0.1),
            )
        if kind == "planted":
            return cls(
                planted=np.asarray(spec["components"], dtype=np.float64),
                link=spec.get("link", "cube"),
                noise_sigma=spec.get("noise_sigma", 0.1),
            )
        raise ValidationError(f"unknown label spec type {kind!r}")


@dataclass
class ExperimentConfig:
    """Everything a pipeline run needs; serializable to JSON."""

    model: DensityModel
    label: LabelSpec
    n_labeled: int
    order: int = 3
    n_unlabeled: int = 0
    decomp: DecompConfig | None = None
    seed: int = 0
    exact_moments: bool = False
    whiten: bool = False

    def __post_init__(self):
        if self.order not in (1, 2, 3):
            raise ValidationError("pipeline order must be 1, 2, or 3")
        if self.n_labeled < 1:
            raise ValidationError("need at least one labeled sample")
        if self.n_unlabeled < 0:
            raise ValidationError("n_unlabeled must be >= 0")
        if self.decomp is None:
            k = 1 if self.label.planted is None else self.label.planted.shape[0]
            self.decomp = DecompConfig(k=max(k, 1), seed=self.seed)

    def to_dict(self) -> dict:
        return {
            "model": model_to_dict(self.model),
            "label": self.label.to_dict(),
            "n_labeled": self.n_labeled,
            "order": self.order,
            "n_unlabeled": self.n_unlabeled,
            "decomp": self.decomp.to_dict(),
            "seed": self.seed,
            "exact_moments": self.exact_moments,
            "whiten": self.whiten,
        }

    @classmethod
    def from_dict(cls, spec: dict) -> "ExperimentConfig":
        try:
            return cls(
                model=model_from_dict(spec["model"]),
                label=LabelSpec.from_dict(spec["label"]),
                n_labeled=int(spec["n_labeled"]),
                order=int(spec.get("order", 3)),
                n_unlabeled=int(spec.get("n_unlabeled", 0)),
                decomp=(
                    DecompConfig.from_dict(spec["decomp"])
                    if spec.get("decomp")
                    else None
                ),
                seed=int(spec.get("seed", 0)),
                exact_moments=bool(spec.get("exact_moments", False)),
                whiten=bool(spec.get("whiten", False)),
            )
        except KeyError as exc:
            raise ValidationError(f"experiment config missing field {exc}") from exc

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")


def synth_generate(cfg: ExperimentConfig) -> LabeledDataset:
    """Draw labeled samples: x from the model, y = G(x) + sigma_y * noise.

    Reproducible per seed; the labeled stream uses child seed (seed, 0).
    """
    rng = np.random.default_rng([cfg.seed, 0])
    x = cfg.model.sample(cfg.n_labeled, rng)
    g = cfg.label.to_poly(cfg.model.dim)
    y = g.evaluate_batch(x)
    if cfg.label.noise_sigma > 0:
        y = y + cfg.label.noise_sigma * rng.standard_normal(y.shape)
    return LabeledDataset(x, y)


def synth_unlabeled(cfg: ExperimentConfig) -> np.ndarray:
    """Unlabeled draw from the model (child seed (seed, 1))."""
    rng = np.random.default_rng([cfg.seed, 1])
    return cfg.model.sample(cfg.n_unlabeled, rng)


def match_components(estimated: np.ndarray, planted: np.ndarray):
    """Greedy matching by absolute inner product; sign-free recovery errors.

    Returns errors aligned to the planted order; an unmatched planted
    component scores the maximum error 2.0.
    """
    est = np.atleast_2d(estimated)
    tru = np.atleast_2d(planted)
    scores = np.abs(est @ tru.T)
    errors = np.full(tru.shape[0], 2.0)
    avail_e = set(range(est.shape[0]))
    avail_t = set(range(tru.shape[0]))
    while avail_e and avail_t:
        best, best_pair = -1.0, None
        for i in sorted(avail_e):
            for j in sorted(avail_t):
                if scores[i, j] > best:
                    best, best_pair = scores[i, j], (i, j)
        i, j = best_pair
        errors[j] = min(
            float(np.linalg.norm(est[i] - tru[j])),
            float(np.linalg.norm(est[i] + tru[j])),
        )
        avail_e.remove(i)
        avail_t.remove(j)
    return errors


@dataclass
class PipelineReport:
    """Run summary: moment quality, decomposition, recovery, stage timings.

    ``timings`` is wall-clock and intentionally excluded from the
    deterministic ``results_dict``; it is written to a separate sidecar.
    """

    seed: int
    order: int
    n_labeled: int
    exact_moments: bool
    whitened: bool
    backend: str
    weights: list
    vectors: list
    residual_fro: float
    candidates_kept: int
    moment_summary: dict | None = None
    stein_gap: dict | None = None
    recovery: dict | None = None
    no_signal: bool = False
    model_check: dict | None = None
    refit: dict | None = None
    timings: dict = field(default_factory=dict)

    def results_dict(self) -> dict:
        out = {
            "seed": self.seed,
            "order": self.order,
            "n_labeled": self.n_labeled,
            "exact_moments": self.exact_moments,
            "whitened": self.whitened,
            "backend": self.backend,
            "weights": self.weights,
            "vectors": self.vectors,
            "residual_fro": self.residual_fro,
            "candidates_kept": self.candidates_kept,
            "moment_summary": self.moment_summary,
            "stein_gap": self.stein_gap,
            "recovery": self.recovery,
            "no_signal": self.no_signal,
            "model_check": self.model_check,
            "refit": self.refit,
        }
        return out

    def to_text(self) -> str:
        lines = [
            f"pipeline run (seed={self.seed}, order={self.order}, "
            f"N={self.n_labeled}, backend={self.backend})",
            f"  exact moments: {self.exact_moments}   whitened: {self.whitened}",
        ]
        if self.moment_summary:
            ms = self.moment_summary
            lines.append(
                f"  moment: max|entry|={ms['max_abs']:.4g} "
                f"max SE={ms['max_se']:.4g} mean SE={ms['mean_se']:.4g}"
            )
        if self.stein_gap:
            lines.append(
                f"  oracle gap: max abs={self.stein_gap['max_abs_gap']:.4g} "
                f"({self.stein_gap['max_gap_std_errors']:.2f} SE)"
            )
        lines.append(
            f"  components: {len(self.weights)} kept "
            f"(residual_fro={self.residual_fro:.4g}, "
            f"candidates={self.candidates_kept})"
        )
        for w, v in zip(self.weights, self.vectors):
            head = ", ".join(f"{x:+.4f}" for x in v[:6])
            tail = ", ..." if len(v) > 6 else ""
            lines.append(f"    w={w:+.5g}  v=[{head}{tail}]")
        if self.recovery:
            errs = ", ".join(f"{e:.3g}" for e in self.recovery["errors"])
            lines.append(f"  recovery errors vs planted: [{errs}]")
        if self.no_signal:
            lines.append("  WARNING: no signal (weights within noise of zero)")
        if self.refit:
            lines.append(
                f"  refit weights: {self.refit['weights']} "
                f"(low likelihood: {self.refit['low_likelihood']})"
            )
        if self.model_check:
            lines.append(
                f"  model check: unlabeled mean norm "
                f"{self.model_check['max_coord_mean']:.4g} "
                f"(gate {self.model_check['gate']:.4g}, "
                f"pass={self.model_check['passed']})"
            )
        if self.timings:
            stages = "  ".join(f"{k}={v * 1e3:.1f}ms" for k, v in self.timings.items())
            lines.append(f"  timings: {stages}")
        return "\n".join(lines) + "\n"


def _stage(timings: dict, name: str):
    class _Timer:
        def __enter__(self):
            self.t0 = time.perf_counter()

        def __exit__(self, exc_type, exc, tb):
            timings[name] = time.perf_counter() - self.t0
            if exc is not None:
                setattr(exc, "stage", name)
            return False

    return _Timer()


def run_pipeline(
    cfg: ExperimentConfig,
    data: LabeledDataset | None = None,
    output_dir=None,
) -> PipelineReport:
    """Score -> cross-moment -> (whiten) -> decompose -> recovery metrics.

    ``data`` overrides synthetic generation (used by the self-taught path).
    Stage failures carry a ``.stage`` attribute naming the failing stage.
    When ``output_dir`` is given, writes report.json / report.txt /
    components.json / moment.stn1 plus the volatile timings.json.
    """
    timings: dict = {}
    model = cfg.model
    g = cfg.label.to_poly(model.dim)
    model_check = None

    with _stage(timings, "generate"):
        if data is None and not cfg.exact_moments:
            data = synth_generate(cfg)
        if cfg.n_unlabeled > 0:
            unlabeled = synth_unlabeled(cfg)
            coord_means = np.abs(unlabeled.mean(axis=0))
            gate = 5.0 / np.sqrt(cfg.n_unlabeled)
            model_check = {
                "max_coord_mean": float(coord_means.max()),
                "gate": float(gate),
                "passed": bool(coord_means.max() <= gate),
            }

    moment_summary = None
    stein_gap = None
    with _stage(timings, "moment"):
        oracle = None
        try:
            oracle = expected_derivative(g, model, cfg.order, "analytic")
        except UnsupportedVariantError:
            pass
        if cfg.exact_moments:
            if oracle is None:
                raise UnsupportedVariantError(
                    "exact-moment mode needs an analytic expected-derivative oracle"
                )
            tensor_est = oracle.data
            max_se = None
        else:
            est = cross_moment(data, model, cfg.order)
            tensor_est = est.value.data
            se = est.std_error.data
            max_se = float(se.max())
            moment_summary = {
                "max_abs": float(np.abs(tensor_est).max()),
                "max_se": max_se,
                "mean_se": float(se.mean()),
            }
            if oracle is not None:
                gap = np.abs(tensor_est - oracle.data)
                with np.errstate(divide="ignore", invalid="ignore"):
                    ratio = np.where(
                        se > 0, gap / np.where(se > 0, se, 1.0),
                        np.where(gap <= 1e-12, 0.0, np.inf),
                    )
                stein_gap = {
                    "max_abs_gap": float(gap.max()),
                    "max_gap_std_errors": float(ratio.max()),
                }

    whitened = False
    wres = None
    tensor_dec = tensor_est
    if cfg.whiten:
        with _stage(timings, "whiten"):
            if cfg.order != 3:
                raise ValidationError("whitening applies to the order-3 path")
            if cfg.exact_moments:
                m2 = expected_derivative(g, model, 2, "analytic").data
            else:
                m2 = cross_moment(data, model, 2).value.data
            wres = whiten(m2, cfg.decomp.k)
            tensor_dec = whitened_tensor(tensor_est, wres)
            whitened = True

    with _stage(timings, "decompose"):
        result = _decompose_by_order(tensor_dec, cfg)
        if whitened:
            vectors = unwhiten_components(wres, result)
            weights = np.array([tensor_value(tensor_est, v) for v in vectors])
            result = DecompositionResult(
                weights, vectors, result.residual_fro, result.candidates_kept,
                result.starts,
            )

    with _stage(timings, "evaluate"):
        recovery = None
        if cfg.label.planted is not None:
            errors = match_components(result.vectors, cfg.label.planted)
            recovery = {
                "errors": [float(e) for e in errors],
                "max_error": float(errors.max()),
            }
        # "No signal" when every weight is within noise of zero: each weight is
        # a linear functional <T, u^(x)m> of the moment, so its standard error
        # propagates as || SE (.) u^(x)m ||_2 entrywise.
        no_signal = False
        if max_se is not None and result.weights.size:
            se_flat = se.reshape(-1)
            clear = []
            for w, v in zip(result.weights, result.vectors):
                u_pow = v.copy()
                for _ in range(cfg.order - 1):
                    u_pow = np.multiply.outer(u_pow, v)
                w_se = float(np.linalg.norm(se_flat * u_pow.reshape(-1)))
                clear.append(abs(float(w)) >= 5.0 * w_se)
            no_signal = not any(clear)

    report = PipelineReport(
        seed=cfg.seed,
        order=cfg.order,
        n_labeled=cfg.n_labeled,
        exact_moments=cfg.exact_moments,
        whitened=whitened,
        backend=BACKEND_NAME,
        weights=[float(w) for w in result.weights],
        vectors=[[float(x) for x in v] for v in result.vectors],
        residual_fro=float(result.residual_fro),
        candidates_kept=int(result.candidates_kept),
        moment_summary=moment_summary,
        stein_gap=stein_gap,
        recovery=recovery,
        no_signal=no_signal,
        model_check=model_check,
        timings=timings,
    )
    if output_dir is not None:
        write_report(report, result, tensor_est, output_dir)
    return report


def _decompose_by_order(tensor_est: np.ndarray, cfg: ExperimentConfig):
    k = cfg.decomp.k
    if cfg.order == 3:
        return decompose(tensor_est, cfg.decomp)
    if cfg.order == 2:
        pairs = matrix_decompose(tensor_est, min(k, tensor_est.shape[0]))
        weights = np.array([w for w, _v in pairs])
        vectors = np.array([v for _w, v in pairs])
        recon = sum(w * np.outer(v, v) for w, v in pairs)
        residual = float(np.linalg.norm(tensor_est - recon))
        return DecompositionResult(weights, vectors, residual, len(pairs))
    # order 1: the moment vector itself is the single direction
    nrm = float(np.linalg.norm(tensor_est))
    if nrm == 0.0:
        return DecompositionResult(
            np.zeros(1), np.zeros((1, tensor_est.shape[0])), 0.0, 0
        )
    v = tensor_est / nrm
    j = int(np.argmax(np.abs(v)))
    if v[j] < 0:
        v, nrm = -v, -nrm
    return DecompositionResult(np.array([nrm]), v[None, :], 0.0, 1)


def write_report(report: PipelineReport, result, tensor_est, output_dir) -> None:
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(
        json.dumps(report.results_dict(), indent=2, sort_keys=True) + "\n"
    )
    (out / "timings.json").write_text(
        json.dumps(report.timings, indent=2, sort_keys=True) + "\n"
    )
    (out / "report.txt").write_text(report.to_text())
    (out / "components.json").write_text(
        json.dumps(result.to_dict(), indent=2, sort_keys=True) + "\n"
    )
    write_tensor(out / "moment.stn1", tensor_est)


def extract_features(components, x, sigma: str = "identity") -> np.ndarray:
    """Feature map [sigma(u_j . x)], ordered like the components (|w| desc).

    ``components`` is a DecompositionResult or a (k, d) array of directions;
    ``x`` a single point or (N, d) batch.
    """
    if sigma not in _SIGMAS:
        raise ValidationError(
            f"unknown nonlinearity {sigma!r}; choose from {sorted(_SIGMAS)}"
        )
    vectors = components.vectors if hasattr(components, "vectors") else components
    vectors = np.atleast_2d(np.asarray(vectors, dtype=np.float64))
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    pts = x[None, :] if single else x
    if pts.shape[1] != vectors.shape[1]:
        raise ValidationError(
            f"point dim {pts.shape[1]} != component dim {vectors.shape[1]}"
        )
    feats = _SIGMAS[sigma](pts @ vectors.T)
    return feats[0] if single else feats


@dataclass
class SelftaughtReport:
    """Weight-transfer diagnostics plus the downstream pipeline report."""

    refit_weights: list
    mean_target_loglik: float
    loglik_threshold: float
    low_likelihood: bool
    pipeline: PipelineReport


def selftaught_pipeline(
    source_model: GaussianMixture,
    source_samples: np.ndarray,
    target: LabeledDataset,
    cfg: ExperimentConfig,
    output_dir=None,
) -> SelftaughtReport:
    """Freeze mixture components, re-fit weights on target inputs, then run
    the standard pipeline with the transferred model on the target data.

    Flags low per-sample target log-likelihood (mean below the source mean
    minus three source standard deviations) as a sign the target is not
    covered by the frozen components.
    """
    if not isinstance(source_model, GaussianMixture):
        raise UnsupportedVariantError("self-taught transfer needs a GaussianMixture")
    weights = selftaught_refit_weights(source_model, target.X)
    variances = (
        None if np.all(source_model.variances == 1.0) else source_model.variances
    )
    transferred = GaussianMixture(weights, source_model.means, variances)
    src_ll = source_model.log_density_batch(
        np.asarray(source_samples, dtype=np.float64)
    )
    tgt_ll = transferred.log_density_batch(target.X)
    threshold = float(src_ll.mean() - 3.0 * src_ll.std())
    mean_tgt = float(tgt_ll.mean())
    cfg2 = ExperimentConfig(
        model=transferred,
        label=cfg.label,
        n_labeled=target.n,
        order=cfg.order,
        n_unlabeled=0,
        decomp=cfg.decomp,
        seed=cfg.seed,
        exact_moments=False,
        whiten=cfg.whiten,
    )
    report = run_pipeline(cfg2, data=target, output_dir=output_dir)
    refit = {
        "weights": [float(w) for w in weights],
        "mean_target_loglik": mean_tgt,
        "threshold": threshold,
        "low_likelihood": bool(mean_tgt < threshold),
    }
    report.refit = refit
    if output_dir is not None:
        out = Path(output_dir)
        (out / "report.json").write_text(
            json.dumps(report.results_dict(), indent=2, sort_keys=True) + "\n"
        )
        (out / "report.txt").write_text(report.to_text())
    return SelftaughtReport(
        refit_weights=refit["weights"],
        mean_target_loglik=mean_tgt,
        loglik_threshold=threshold,
        low_likelihood=refit["low_likelihood"],
        pipeline=report,
    )
