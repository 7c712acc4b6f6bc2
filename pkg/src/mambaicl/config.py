"""Experiment configuration: a TOML file with one table per concern.

Every key has a default, so an empty file is a valid (desk-scale) config.
Unknown keys and bad values are collected and reported together.  The only
environment override is ``MAMBAICL_OUT`` for the output directory.
"""

from __future__ import annotations

import os
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ValidationError
from .hermite import GatingConstants, LinkFunction
from .pretraining import DEFAULT_LAMBDA2_GRID, ETA_MODES, TrainConfig
from .tasks import FeatureSpace

OUT_ENV = "MAMBAICL_OUT"
MODELS = ("mamba_mlp", "krr_full", "krr_intrinsic", "zero")


@dataclass
class TaskSection:
    link: str | list = "he3"  # preset name or orthonormal Hermite coefficients
    d: int = 6
    r: int = 2
    index_set: list | None = None  # 0-based; defaults to the first r coordinates
    tau: float = 0.1


@dataclass
class GatingSection:
    rho: float = 0.75
    b: float = -10.0
    truncation: float | None = None


@dataclass
class TrainSection:
    eta: float | str = "auto"
    lambda1: float | None = None
    lambda2: float | list = field(default_factory=lambda: list(DEFAULT_LAMBDA2_GRID))
    n_pt: int = 2000
    t1: int = 2000
    t2: int = 2000
    m: int = 256
    gamma0_scale: float = 0.1
    embedding: str = "quadratic"
    val_fraction: float = 0.2


@dataclass
class EvalSection:
    n_test: list = field(default_factory=lambda: list(range(1, 41)))
    tasks: int = 128
    prompts_per_task: int = 256
    metric: str = "abs"
    models: list = field(default_factory=lambda: list(MODELS))
    krr_bandwidth: float = 1.0
    krr_ridge: float = 1.0


@dataclass
class DiagnoseSection:
    n: int = 2000
    prompts: int = 300
    fit_ge: int | str = "auto"
    mc_samples: int = 10_000_000
    oracle_samples: int = 20_000
    min_cosine: float = 0.9
    min_r2_margin: float = 0.5
    min_alignment_ratio: float = 2.0


@dataclass
class OutputSection:
    dir: str = "runs/default"


SECTIONS = {
    "task": TaskSection,
    "gating": GatingSection,
    "train": TrainSection,
    "eval": EvalSection,
    "diagnose": DiagnoseSection,
    "output": OutputSection,
}


@dataclass
class ExperimentConfig:
    seed: int = 0
    task: TaskSection = field(default_factory=TaskSection)
    gating: GatingSection = field(default_factory=GatingSection)
    train: TrainSection = field(default_factory=TrainSection)
    eval: EvalSection = field(default_factory=EvalSection)
    diagnose: DiagnoseSection = field(default_factory=DiagnoseSection)
    output: OutputSection = field(default_factory=OutputSection)

    # derived objects ------------------------------------------------------

    def link(self) -> LinkFunction:
        choice = self.task.link
        if isinstance(choice, str):
            return LinkFunction.preset(choice)
        return LinkFunction(tuple(choice)).normalized()

    def space(self, d: int | None = None) -> FeatureSpace:
        return FeatureSpace(self.task.d if d is None else d, self.task.r, self.task.index_set)

    def gc(self) -> GatingConstants:
        return GatingConstants(self.gating.rho, self.gating.b, self.task.tau)

    def train_config(self) -> TrainConfig:
        t = self.train
        lam2 = tuple(t.lambda2) if isinstance(t.lambda2, list) else t.lambda2
        return TrainConfig(
            eta=t.eta,
            lambda1=t.lambda1,
            lambda2=lam2,
            n_pt=t.n_pt,
            t1=t.t1,
            t2=t.t2,
            m=t.m,
            gamma0_scale=t.gamma0_scale,
            gc=self.gc(),
            seed=self.seed,
            embedding=t.embedding,
            val_fraction=t.val_fraction,
        )

    def to_dict(self, include_output: bool = True) -> dict:
        out: dict[str, Any] = {"seed": self.seed}
        for name in SECTIONS:
            if name == "output" and not include_output:
                continue
            sec = getattr(self, name)
            out[name] = {f.name: getattr(sec, f.name) for f in fields(sec)}
        return out

    def out_dir(self, override: str | None = None) -> Path:
        return Path(override or os.environ.get(OUT_ENV) or self.output.dir)


# --------------------------------------------------------------------------
# parsing and validation


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _is_num(v) -> bool:
    return (isinstance(v, (int, float))) and not isinstance(v, bool)


def from_dict(raw: dict, seed: int | None = None) -> ExperimentConfig:
    problems: list[str] = []
    cfg = ExperimentConfig()
    for key, value in raw.items():
        if key == "seed":
            cfg.seed = value
        elif key in SECTIONS:
            if not isinstance(value, dict):
                problems.append(f"{key}: expected a table")
                continue
            sec = getattr(cfg, key)
            known = {f.name for f in fields(sec)}
            for k, v in value.items():
                if k not in known:
                    problems.append(f"{key}.{k}: unknown key")
                else:
                    setattr(sec, k, v)
        else:
            problems.append(f"{key}: unknown key")
    if seed is not None:
        cfg.seed = seed
    problems += _check(cfg)
    if problems:
        raise ValidationError(problems)
    return cfg


def _check(cfg: ExperimentConfig) -> list[str]:
    p: list[str] = []
    if not (_is_int(cfg.seed) and 0 <= cfg.seed < 2**64):
        p.append(f"seed: must be an integer in [0, 2^64), got {cfg.seed!r}")

    t = cfg.task
    if isinstance(t.link, str):
        try:
            LinkFunction.preset(t.link)
        except ValueError as exc:
            p.append(f"task.link: {exc}")
    elif isinstance(t.link, list) and t.link and all(_is_num(c) for c in t.link):
        try:
            LinkFunction(tuple(t.link)).normalized()
        except ValueError as exc:
            p.append(f"task.link: {exc}")
    else:
        p.append("task.link: expected a preset name or a list of numbers")
    dims_ok = _is_int(t.d) and _is_int(t.r)
    if not dims_ok:
        p.append("task.d, task.r: must be integers")
    elif not 1 <= t.r <= t.d:
        p.append(f"task.r: need 1 <= r <= d, got r={t.r}, d={t.d}")
    if t.index_set is not None:
        if not (isinstance(t.index_set, list) and all(_is_int(i) for i in t.index_set)):
            p.append("task.index_set: expected a list of integers")
        elif dims_ok:
            try:
                FeatureSpace(t.d, t.r, t.index_set)
            except ValueError as exc:
                p.append(f"task.index_set: {exc}")
    if not (_is_num(t.tau) and t.tau >= 0):
        p.append(f"task.tau: must be a nonnegative number, got {t.tau!r}")

    g = cfg.gating
    if not (_is_num(g.rho) and g.rho > 0):
        p.append(f"gating.rho: must be positive, got {g.rho!r}")
    if not _is_num(g.b):
        p.append(f"gating.b: must be a number, got {g.b!r}")
    if g.truncation is not None and not (_is_num(g.truncation) and g.truncation > 0):
        p.append(f"gating.truncation: must be positive when set, got {g.truncation!r}")

    tr = cfg.train
    if isinstance(tr.eta, str):
        if tr.eta not in ETA_MODES:
            p.append(f"train.eta: unknown mode {tr.eta!r}; use a number or one of {list(ETA_MODES)}")
        elif tr.lambda1 is not None:
            p.append("train.lambda1: must be unset when eta is automatic (it is then 1/eta)")
    elif not (_is_num(tr.eta) and tr.eta >= 0):
        p.append(f"train.eta: must be nonnegative, got {tr.eta!r}")
    if tr.lambda1 is not None and not (_is_num(tr.lambda1) and tr.lambda1 >= 0):
        p.append(f"train.lambda1: must be nonnegative, got {tr.lambda1!r}")
    grid = tr.lambda2 if isinstance(tr.lambda2, list) else [tr.lambda2]
    if not grid or not all(_is_num(v) and v > 0 for v in grid):
        p.append(f"train.lambda2: values must be positive numbers, got {tr.lambda2!r}")
    for name in ("n_pt", "t1", "t2", "m"):
        v = getattr(tr, name)
        if not (_is_int(v) and v >= 1):
            p.append(f"train.{name}: must be a positive integer, got {v!r}")
    if isinstance(tr.lambda2, list) and len(tr.lambda2) > 1 and _is_int(tr.t2) and tr.t2 < 2:
        p.append("train.t2: a lambda2 grid needs at least 2 tasks")
    if not (_is_num(tr.gamma0_scale)):
        p.append(f"train.gamma0_scale: must be a number, got {tr.gamma0_scale!r}")
    if tr.embedding not in ("quadratic", "linear"):
        p.append(f"train.embedding: expected 'quadratic' or 'linear', got {tr.embedding!r}")
    if not (_is_num(tr.val_fraction) and 0 < tr.val_fraction < 1):
        p.append(f"train.val_fraction: must lie in (0, 1), got {tr.val_fraction!r}")

    e = cfg.eval
    if not (isinstance(e.n_test, list) and e.n_test and all(_is_int(n) and n >= 1 for n in e.n_test)):
        p.append("eval.n_test: expected a nonempty list of positive integers")
    for name in ("tasks", "prompts_per_task"):
        v = getattr(e, name)
        if not (_is_int(v) and v >= 1):
            p.append(f"eval.{name}: must be a positive integer, got {v!r}")
    if e.metric not in ("abs", "sq"):
        p.append(f"eval.metric: expected 'abs' or 'sq', got {e.metric!r}")
    if not (isinstance(e.models, list) and e.models and all(m in MODELS for m in e.models)):
        p.append(f"eval.models: expected a nonempty subset of {list(MODELS)}, got {e.models!r}")
    if not (_is_num(e.krr_bandwidth) and e.krr_bandwidth > 0):
        p.append(f"eval.krr_bandwidth: must be positive, got {e.krr_bandwidth!r}")
    if not (_is_num(e.krr_ridge) and e.krr_ridge >= 0):
        p.append(f"eval.krr_ridge: must be nonnegative, got {e.krr_ridge!r}")

    dg = cfg.diagnose
    for name in ("n", "prompts", "mc_samples", "oracle_samples"):
        v = getattr(dg, name)
        if not (_is_int(v) and v >= 1):
            p.append(f"diagnose.{name}: must be a positive integer, got {v!r}")
    if dg.fit_ge not in ("auto", 1, 2):
        p.append(f"diagnose.fit_ge: expected 'auto', 1 or 2, got {dg.fit_ge!r}")
    for name in ("min_cosine", "min_r2_margin", "min_alignment_ratio"):
        if not _is_num(getattr(dg, name)):
            p.append(f"diagnose.{name}: must be a number")

    if not isinstance(cfg.output.dir, str) or not cfg.output.dir:
        p.append("output.dir: must be a nonempty string")
    return p


def load_config(path, seed: int | None = None) -> ExperimentConfig:
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except OSError as exc:
        raise ValidationError(f"config {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ValidationError(f"config {path}: {exc}") from exc
    return from_dict(raw, seed)
