"""Command-line interface.

Subcommands: score-eval, moment, stein-check, decompose, pipeline, selftaught.
Paths are resolved against --workdir. Exit codes: 0 success, 2 validation
error, 3 numeric/degeneracy error, 4 statistical gate failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from ._kernels import BACKEND_NAME
from .errors import GATE_EXIT_CODE, ScoreMomentsError, ValidationError
from .pipeline import (
    ExperimentConfig,
    LabelSpec,
    run_pipeline,
    selftaught_pipeline,
    synth_generate,
)
from .score_models import GaussianMixture, load_model, score_batch
from .spectral_decomp import DecompConfig, decompose
from .stein_moments import (
    LabeledDataset,
    PolyFunction,
    cross_moment,
    parametric_stein_residual,
    stein_residual,
)
from .tensor_core import read_tensor, write_tensor


def _resolve(workdir: str, path: str) -> Path:
    p = Path(path)
    return p if p.is_absolute() else Path(workdir) / p


def _load_points(path: Path) -> np.ndarray:
    """CSV of evaluation points: header x1..xd, optionally followed by labels."""
    with open(path) as fh:
        header = fh.readline().strip()
    names = [c.strip() for c in header.split(",")]
    n_x = sum(1 for c in names if c.startswith("x"))
    if n_x < 1:
        raise ValidationError(f"no x columns in {path}")
    raw = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return raw[:, :n_x]


def _cmd_score_eval(args) -> int:
    model = load_model(_resolve(args.workdir, args.model))
    pts = _load_points(_resolve(args.workdir, args.points))
    if pts.shape[1] != model.dim:
        raise ValidationError(
            f"points have dim {pts.shape[1]}, model has {model.dim}"
        )
    scores = score_batch(model, pts, args.order)
    stacked = scores.reshape((pts.shape[0],) + (model.dim,) * args.order)
    write_tensor(_resolve(args.workdir, args.out), stacked)
    print(
        f"wrote {pts.shape[0]} order-{args.order} score tensors "
        f"to {args.out} (backend {BACKEND_NAME})"
    )
    return 0


def _cmd_moment(args) -> int:
    model = load_model(_resolve(args.workdir, args.model))
    data = LabeledDataset.from_csv(_resolve(args.workdir, args.data))
    est = cross_moment(data, model, args.order)
    write_tensor(_resolve(args.workdir, args.out), est.value)
    if args.se_out:
        write_tensor(_resolve(args.workdir, args.se_out), est.std_error)
    print(
        f"moment over {est.n} samples: max |entry| = "
        f"{float(np.abs(est.value.data).max()):.6g}, "
        f"max SE = {float(est.std_error.data.max()):.6g}"
    )
    return 0


def _cmd_stein_check(args) -> int:
    g = PolyFunction.load(_resolve(args.workdir, args.g))
    if args.parametric_mean is not None:
        mu0 = np.asarray(json.loads(args.parametric_mean), dtype=np.float64)
        report = parametric_stein_residual(
            mu0, g, args.order, args.samples, args.seed
        )
        label = f"parametric (mu0={mu0.tolist()})"
    else:
        if not args.model:
            raise ValidationError("stein-check needs --model or --parametric-mean")
        model = load_model(_resolve(args.workdir, args.model))
        report = stein_residual(
            model, g, args.order, args.samples, args.seed, oracle=args.oracle
        )
        label = type(model).__name__
    print(
        f"stein check [{label}] order {args.order}, N={args.samples}: "
        f"max gap {report.max_abs_gap:.6g} "
        f"({report.max_gap_std_errors:.3f} standard errors)"
    )
    if not report.passed:
        print("FAIL: gap exceeds 5 standard errors", file=sys.stderr)
        return GATE_EXIT_CODE
    print("PASS (within 5 standard errors)")
    return 0


def _cmd_decompose(args) -> int:
    tensor = read_tensor(_resolve(args.workdir, args.tensor))
    cfg = DecompConfig(
        k=args.k,
        n_inits=args.inits,
        n_iters=args.iters,
        nu=args.nu,
        tol=args.tol,
        seed=args.seed,
        init=args.init,
    )
    result = decompose(tensor, cfg)
    out = _resolve(args.workdir, args.out)
    out.write_text(json.dumps(result.to_dict(), indent=2, sort_keys=True) + "\n")
    print(
        f"decomposed into {len(result.weights)} components, "
        f"residual_fro = {result.residual_fro:.6g}, "
        f"weights = {[round(w, 6) for w in result.weights.tolist()]}"
    )
    return 0


def _cmd_pipeline(args) -> int:
    cfg = ExperimentConfig.load(_resolve(args.workdir, args.config))
    out_dir = _resolve(args.workdir, args.out_dir) if args.out_dir else None
    data = None
    if args.data:
        data = LabeledDataset.from_csv(_resolve(args.workdir, args.data))
    report = run_pipeline(cfg, data=data, output_dir=out_dir)
    print(report.to_text(), end="")
    return 0


def _cmd_selftaught(args) -> int:
    spec = json.loads(_resolve(args.workdir, args.config).read_text())
    source_model = GaussianMixture(
        spec["source_model"]["weights"],
        spec["source_model"]["means"],
        spec["source_model"].get("variances"),
    )
    src_spec = spec["source_samples"]
    if "path" in src_spec:
        source_x = _load_points(_resolve(args.workdir, src_spec["path"]))
    else:
        rng = np.random.default_rng(int(src_spec.get("seed", 0)))
        source_x = source_model.sample(int(src_spec["n"]), rng)
    label = LabelSpec.from_dict(spec["label"])
    tgt_spec = spec["target"]
    if "path" in tgt_spec:
        target = LabeledDataset.from_csv(_resolve(args.workdir, tgt_spec["path"]))
    else:
        from .score_models import model_from_dict

        tgt_cfg = ExperimentConfig(
            model=model_from_dict(tgt_spec["model"]),
            label=label,
            n_labeled=int(tgt_spec["n"]),
            order=int(spec.get("order", 3)),
            seed=int(tgt_spec.get("seed", 0)),
        )
        target = synth_generate(tgt_cfg)
    cfg = ExperimentConfig(
        model=source_model,
        label=label,
        n_labeled=target.n,
        order=int(spec.get("order", 3)),
        decomp=DecompConfig.from_dict(spec["decomp"]) if spec.get("decomp") else None,
        seed=int(spec.get("seed", 0)),
    )
    out_dir = _resolve(args.workdir, args.out_dir) if args.out_dir else None
    rep = selftaught_pipeline(source_model, source_x, target, cfg, output_dir=out_dir)
    print(
        f"refit weights: {[round(w, 4) for w in rep.refit_weights]} "
        f"(mean target loglik {rep.mean_target_loglik:.4f}, "
        f"threshold {rep.loglik_threshold:.4f}, "
        f"low likelihood: {rep.low_likelihood})"
    )
    print(rep.pipeline.to_text(), end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="scoremoments",
        description=(
            "Higher-order score functions, Stein cross-moments, and rank-1 "
            "tensor feature extraction"
        ),
    )
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument(
        "--workdir", default=".", help="base directory for relative paths"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("score-eval", help="evaluate score tensors at points")
    p.add_argument("--model", required=True)
    p.add_argument("--points", required=True)
    p.add_argument("--order", type=int, default=3)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_score_eval)

    p = sub.add_parser("moment", help="cross-moment of labels with score tensors")
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--order", type=int, default=3)
    p.add_argument("--out", required=True)
    p.add_argument("--se-out", default=None)
    p.set_defaults(func=_cmd_moment)

    p = sub.add_parser("stein-check", help="verify the Stein identity by Monte Carlo")
    p.add_argument("--model", default=None)
    p.add_argument("--g", required=True, help="polynomial label function JSON")
    p.add_argument("--order", type=int, default=2)
    p.add_argument("--samples", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--oracle", default="auto", choices=["auto", "analytic", "quadrature"])
    p.add_argument(
        "--parametric-mean",
        default=None,
        help="JSON vector mu0: check the parametric identity instead",
    )
    p.set_defaults(func=_cmd_stein_check)

    p = sub.add_parser("decompose", help="rank-1 decomposition of a stored tensor")
    p.add_argument("--tensor", required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--inits", type=int, default=None)
    p.add_argument("--iters", type=int, default=100)
    p.add_argument("--nu", type=float, default=0.5)
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--init", default="random", choices=["random", "svd"])
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_decompose)

    p = sub.add_parser("pipeline", help="end-to-end synthetic experiment")
    p.add_argument("--config", required=True)
    p.add_argument("--data", default=None, help="CSV dataset overriding synthesis")
    p.add_argument("--out-dir", default=None)
    p.set_defaults(func=_cmd_pipeline)

    p = sub.add_parser("selftaught", help="weight transfer then pipeline")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir", default=None)
    p.set_defaults(func=_cmd_selftaught)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ScoreMomentsError as exc:
        stage = getattr(exc, "stage", None)
        where = f" [stage: {stage}]" if stage else ""
        print(f"error{where}: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
