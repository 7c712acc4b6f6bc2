"""ReLU head on top of the normalized Mamba scalar, and ICL test-error estimation."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np

from .embedding import EmbeddedPrompt, feature_map
from .hermite import GatingConstants, LinkFunction
from .ssm import MambaParams, mamba_scalar, normalized_scalar
from .tasks import FeatureSpace, PromptBatch, RngStream, sample_task


@dataclass
class MlpParams:
    u: np.ndarray
    v: np.ndarray
    a: np.ndarray

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=float)
        self.v = np.asarray(self.v, dtype=float)
        self.a = np.asarray(self.a, dtype=float)
        if not (self.u.shape == self.v.shape == self.a.shape and self.u.ndim == 1):
            raise ValueError("u, v, a must be vectors of equal length")
        if not all(np.all(np.isfinite(t)) for t in (self.u, self.v, self.a)):
            raise ValueError("MLP parameters must be finite")

    @property
    def m(self) -> int:
        return len(self.u)


def relu(x):
    return np.maximum(x, 0.0)


def hidden(z, p: MlpParams) -> np.ndarray:
    """ReLU(v z + a), shape ``z.shape + (m,)``."""
    z = np.asarray(z, dtype=float)
    return relu(z[..., None] * p.v + p.a)


def mlp_forward(z, p: MlpParams):
    out = hidden(z, p) @ p.u
    return out if np.ndim(out) else float(out)


def predict(Z: EmbeddedPrompt, mp: MambaParams, hp: MlpParams) -> float:
    if Z.n < 1:
        raise ValueError("prediction needs at least one context example")
    return float(mlp_forward(mamba_scalar(Z, mp) / Z.n, hp))


# --------------------------------------------------------------------------
# models over prompt batches

Model = Callable[[PromptBatch], np.ndarray]


@dataclass
class MambaMlpModel:
    mamba: MambaParams
    mlp: MlpParams
    embedding: str = "quadratic"

    def scalar(self, batch: PromptBatch) -> np.ndarray:
        fmap = feature_map(self.embedding)
        return normalized_scalar(
            fmap(batch.xs), batch.ys, fmap(batch.queries), self.mamba.gamma, self.mamba.gc
        )

    def __call__(self, batch: PromptBatch) -> np.ndarray:
        return np.asarray(mlp_forward(self.scalar(batch), self.mlp))


def zero_model(batch: PromptBatch) -> np.ndarray:
    return np.zeros(len(batch))


@dataclass
class LinkOracleModel:
    """Predicts g(<beta, x>) using the task's true feature vector."""

    g: LinkFunction

    def __call__(self, batch: PromptBatch) -> np.ndarray:
        return self.g(batch.queries @ batch.beta)


# --------------------------------------------------------------------------
# test error


@dataclass
class ErrorSummary:
    mean: float
    std: float
    per_task: np.ndarray
    metric: str = "abs"

    @property
    def std_error(self) -> float:
        return self.std / np.sqrt(len(self.per_task))


def residual_loss(pred: np.ndarray, target: np.ndarray, metric: str) -> np.ndarray:
    if metric == "abs":
        return np.abs(pred - target)
    if metric == "sq":
        return (pred - target) ** 2
    raise ValueError(f"unknown metric {metric!r}")


def summarize(per_task: np.ndarray, metric: str) -> ErrorSummary:
    per_task = np.asarray(per_task, dtype=float)
    std = float(np.std(per_task, ddof=1)) if len(per_task) > 1 else 0.0
    return ErrorSummary(float(np.mean(per_task)), std, per_task, metric)


def evaluate_models(
    models: Mapping[str, Model],
    space: FeatureSpace,
    g: LinkFunction,
    tau: float,
    n: int,
    tasks: int,
    prompts_per_task: int,
    stream: RngStream,
    metric: str = "abs",
    workers: int = 1,
) -> dict[str, ErrorSummary]:
    """Per-task mean loss of every model on shared prompts.

    Task ``t`` draws from ``stream.child(t)``; results are gathered in task
    order, so the outcome does not depend on ``workers``.
    """
    if tasks < 1 or prompts_per_task < 1:
        raise ValueError("tasks and prompts_per_task must be positive")
    names = list(models)

    def one(t: int) -> np.ndarray:
        batch = sample_task(space, g, tau, n, prompts_per_task, stream.child(t), task_id=t)
        return np.array(
            [np.mean(residual_loss(models[k](batch), batch.query_labels, metric)) for k in names]
        )

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(one, range(tasks)))
    else:
        rows = [one(t) for t in range(tasks)]
    table = np.vstack(rows)
    return {k: summarize(table[:, i], metric) for i, k in enumerate(names)}


def test_error(
    model: Model,
    space: FeatureSpace,
    g: LinkFunction,
    tau: float,
    n: int,
    tasks: int,
    prompts_per_task: int,
    stream: RngStream,
    metric: str = "abs",
    workers: int = 1,
) -> ErrorSummary:
    """Monte-Carlo estimate of E|f(Z) - y| (or squared error) at context length n."""
    out = evaluate_models({"model": model}, space, g, tau, n, tasks, prompts_per_task, stream, metric, workers)
    return out["model"]


test_error.__test__ = False  # not a pytest test despite the name
