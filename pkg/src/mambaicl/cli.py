"""Command-line front end: pretrain, sweep, diagnose, plot, selftest.

Exit codes: 0 success, 2 validation error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import (
    KernelRidgeModel,
    cosine,
    dominant_degree,
    exponent_reduction_report,
    feature_learning_fit,
    gamma_alignment,
    predict_gamma_star,
)
from .config import ExperimentConfig, load_config
from .embedding import d_tilde
from .errors import NumericalError, ValidationError
from .plot import render_svg
from .predictor import MambaMlpModel, evaluate_models, zero_model
from .pretraining import (
    Checkpoint,
    collect_stage_data,
    dumps_checkpoint,
    load_checkpoint,
    pretrain,
)
from .results import ResultRow, read_rows, write_report, write_rows
from .selftest import run_selftest
from .tasks import DIAGNOSE, EVAL, ORACLE, RngStream

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 2, 3
CHECKPOINT_NAME = "checkpoint.json"
SWEEP_NAME = "sweep.csv"
DIAGNOSTICS_NAME = "diagnostics.csv"


def _write_manifest(out: Path, name: str, cfg: ExperimentConfig, wall: float, workers: int, extra: dict) -> None:
    manifest = {
        "command": name,
        "version": __version__,
        "config": cfg.to_dict(),
        "wall_time_s": wall,
        "workers": workers,
        **extra,
    }
    (out / f"{name}_manifest.json").write_text(
        json.dumps(manifest, sort_keys=True, indent=1, default=str) + "\n", encoding="utf-8", newline="\n"
    )


# --------------------------------------------------------------------------
# pretrain


def run_pretrain(cfg: ExperimentConfig, out: Path, workers: int = 1) -> Path:
    start = time.perf_counter()
    out.mkdir(parents=True, exist_ok=True)
    result = pretrain(cfg.train_config(), cfg.space(), cfg.link(), cfg.task.tau, workers=workers)
    path = out / CHECKPOINT_NAME
    path.write_text(dumps_checkpoint(result, cfg.to_dict(include_output=False)), encoding="utf-8", newline="\n")
    diag = {
        "stage1": {"eta": result.stage1.eta, **result.stage1.diagnostics},
        "stage2": {
            "chosen_lambda2": result.stage2.chosen_lambda2,
            "train_loss": result.stage2.train_loss,
            "kkt_residual": result.stage2.kkt_residual,
            "condition": result.stage2.condition,
        },
    }
    _write_manifest(out, "pretrain", cfg, time.perf_counter() - start, workers, {"diagnostics": diag})
    return path


# --------------------------------------------------------------------------
# sweep


def _check_compatible(ckpt: Checkpoint, cfg: ExperimentConfig) -> None:
    want = d_tilde(cfg.task.d, cfg.train.embedding)
    if ckpt.d_tilde != want:
        raise ValidationError(
            f"checkpoint has {ckpt.d_tilde} gamma slots but the config (d={cfg.task.d}, "
            f"embedding={cfg.train.embedding}) needs {want}"
        )


def build_models(cfg: ExperimentConfig, ckpt: Checkpoint | None) -> dict:
    models = {}
    for name in cfg.eval.models:
        if name == "mamba_mlp":
            if ckpt is None:
                raise ValidationError("eval.models includes mamba_mlp but no checkpoint was given")
            _check_compatible(ckpt, cfg)
            models[name] = MambaMlpModel(ckpt.mamba, ckpt.mlp, cfg.train.embedding)
        elif name == "krr_full":
            models[name] = KernelRidgeModel(cfg.eval.krr_bandwidth, cfg.eval.krr_ridge)
        elif name == "krr_intrinsic":
            models[name] = KernelRidgeModel(cfg.eval.krr_bandwidth, cfg.eval.krr_ridge, cfg.space().index_set)
        elif name == "zero":
            models[name] = zero_model
    return models


def sweep_rows(cfg: ExperimentConfig, ckpt: Checkpoint | None, workers: int = 1) -> list[ResultRow]:
    """One row per (model, N); task ``t`` at context length ``N`` uses stream (EVAL, N, t)."""
    models = build_models(cfg, ckpt)
    space, g, e = cfg.space(), cfg.link(), cfg.eval
    rows = []
    for n in e.n_test:
        stream = RngStream(cfg.seed, (EVAL, n))
        res = evaluate_models(models, space, g, cfg.task.tau, n, e.tasks, e.prompts_per_task, stream, e.metric, workers)
        for name in models:
            s = res[name]
            rows.append(ResultRow(name, n, space.d, space.r, cfg.seed, s.mean, s.std, e.metric))
    return rows


def run_sweep(cfg: ExperimentConfig, checkpoint: Path | None, out: Path, workers: int = 1) -> Path:
    start = time.perf_counter()
    ckpt = load_checkpoint(checkpoint) if checkpoint is not None else None
    rows = sweep_rows(cfg, ckpt, workers)
    out.mkdir(parents=True, exist_ok=True)
    path = out / SWEEP_NAME
    write_rows(path, rows)
    _write_manifest(
        out,
        "sweep",
        cfg,
        time.perf_counter() - start,
        workers,
        {"checkpoint": str(checkpoint) if checkpoint else None, "rows": len(rows)},
    )
    return path


# --------------------------------------------------------------------------
# diagnose


def diagnose_entries(cfg: ExperimentConfig, ckpt: Checkpoint) -> list[tuple[str, str, object]]:
    _check_compatible(ckpt, cfg)
    dg, space, g, gc = cfg.diagnose, cfg.space(), cfg.link(), cfg.gc()
    gamma = ckpt.mamba.gamma
    entries: list[tuple[str, str, object]] = []
    quadratic = cfg.train.embedding == "quadratic"

    pred = None
    if quadratic:
        pred = predict_gamma_star(
            g, gc, cfg.train.gamma0_scale, space, 1.0, dg.oracle_samples, RngStream(cfg.seed, (ORACLE, 0)),
            truncation=cfg.gating.truncation,
        )
        eta = float(ckpt.raw.get("stage1", {}).get("eta", 1.0))
        cos = cosine(gamma / eta, pred.gamma)
        cos_nc = cosine(gamma[1:], pred.gamma[1:])
        entries += [
            ("oracle", "cosine", cos),
            ("oracle", "cosine_nonconstant", cos_nc),
            ("oracle", "threshold", float(dg.min_cosine)),
            ("oracle", "pass", bool(cos > dg.min_cosine)),
        ]
        entries += [("oracle", f"a{p}", float(v)) for p, v in enumerate(pred.a.coeffs)]
        entries += [("oracle", f"b{p}", float(v)) for p, v in enumerate(pred.b.coeffs)]

    ge = dg.fit_ge
    if ge == "auto":
        ge = dominant_degree(pred.gamma, space.d) if pred is not None else 1
    data = collect_stage_data(space, g, cfg.task.tau, dg.n, dg.prompts, RngStream(cfg.seed, (DIAGNOSE,)), gc, cfg.train.embedding)
    fit = feature_learning_fit(gamma, data, space.r, ge)
    entries += [
        ("feature_fit", "ge_used", fit.ge_used),
        ("feature_fit", "p1", fit.coeffs[0]),
        ("feature_fit", "p2", fit.coeffs[1]),
        ("feature_fit", "r_squared", fit.r_squared),
        ("feature_fit", "baseline_r_squared", fit.baseline_r_squared),
        ("feature_fit", "residual_rms", fit.residual_rms),
        ("feature_fit", "threshold", float(dg.min_r2_margin)),
        ("feature_fit", "pass", bool(fit.margin >= dg.min_r2_margin)),
    ]

    if quadratic:
        al = gamma_alignment(gamma, space)
        entries += [
            ("alignment", "mass_on_feature_slots", al.mass_on_feature_slots),
            ("alignment", "uniform_share", al.uniform_share),
            ("alignment", "ratio", al.ratio),
            ("alignment", "threshold", float(dg.min_alignment_ratio)),
            ("alignment", "pass", bool(al.ratio > dg.min_alignment_ratio)),
        ]

    er = exponent_reduction_report(g, gc, dg.mc_samples, RngStream(cfg.seed, (ORACLE, 1)))
    entries += [("exponent_reduction", f"h{p}", float(v)) for p, v in enumerate(er.estimates)]
    entries += [("exponent_reduction", f"se{p}", float(v)) for p, v in enumerate(er.std_errors)]
    entries += [
        ("exponent_reduction", "first_significant", er.first_significant),
        ("exponent_reduction", "generative_exponent", er.generative_exponent),
        ("exponent_reduction", "information_exponent", er.information_exponent),
        ("exponent_reduction", "conclusive", er.conclusive),
        ("exponent_reduction", "agrees", er.agrees),
    ]
    return entries


def run_diagnose(cfg: ExperimentConfig, checkpoint: Path, out: Path, workers: int = 1) -> Path:
    start = time.perf_counter()
    entries = diagnose_entries(cfg, load_checkpoint(checkpoint))
    out.mkdir(parents=True, exist_ok=True)
    path = out / DIAGNOSTICS_NAME
    write_report(path, entries)
    _write_manifest(out, "diagnose", cfg, time.perf_counter() - start, workers, {"checkpoint": str(checkpoint)})
    return path


# --------------------------------------------------------------------------
# plot


def run_plot(csv_path: Path, out: Path | None = None) -> Path:
    svg = render_svg(read_rows(csv_path))
    target = (out if out is not None else csv_path.parent) / (csv_path.stem + ".svg")
    target.parent.mkdir(parents=True, exist_ok=True)
    target.write_text(svg, encoding="utf-8", newline="\n")
    return target


# --------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mambaicl", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, checkpoint: bool):
        p.add_argument("--config", type=Path, help="TOML experiment config (defaults apply when omitted)")
        p.add_argument("--out", type=Path, help="output directory (overrides output.dir)")
        p.add_argument("--workers", type=int, default=1, help="worker threads for task-level parallelism")
        p.add_argument("--seed", type=int, help="master seed (overrides the config)")
        if checkpoint:
            p.add_argument("--checkpoint", type=Path, help="checkpoint from 'pretrain'")

    common(sub.add_parser("pretrain", help="run both pretraining stages and write a checkpoint"), False)
    common(sub.add_parser("sweep", help="evaluate the model and baselines over the context-length grid"), True)
    common(sub.add_parser("diagnose", help="feature-learning, alignment and oracle diagnostics"), True)
    p = sub.add_parser("plot", help="render a sweep CSV as an SVG line chart")
    p.add_argument("csv", type=Path)
    p.add_argument("--out", type=Path, help="output directory (default: next to the CSV)")
    p = sub.add_parser("selftest", help="run the built-in invariant checks")
    p.add_argument("--seed", type=int, default=0)
    return parser


def _config(args) -> ExperimentConfig:
    if args.workers < 1:
        raise ValidationError(f"--workers must be at least 1, got {args.workers}")
    if args.config is None:
        from .config import from_dict

        return from_dict({}, args.seed)
    return load_config(args.config, args.seed)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "selftest":
            return EXIT_OK if run_selftest(args.seed) else EXIT_NUMERICAL
        if args.command == "plot":
            print(run_plot(args.csv, args.out))
            return EXIT_OK
        cfg = _config(args)
        out = cfg.out_dir(args.out)
        if args.command == "pretrain":
            print(run_pretrain(cfg, out, args.workers))
        elif args.command == "sweep":
            ckpt = args.checkpoint
            if ckpt is None and "mamba_mlp" in cfg.eval.models and (out / CHECKPOINT_NAME).exists():
                ckpt = out / CHECKPOINT_NAME
            print(run_sweep(cfg, ckpt, out, args.workers))
        elif args.command == "diagnose":
            ckpt = args.checkpoint or out / CHECKPOINT_NAME
            print(run_diagnose(cfg, ckpt, out, args.workers))
        return EXIT_OK
    except ValidationError as exc:
        print("validation error:", file=sys.stderr)
        for problem in exc.problems:
            print(f"  - {problem}", file=sys.stderr)
        return EXIT_VALIDATION
    except (NumericalError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
