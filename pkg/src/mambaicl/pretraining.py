"""Two-stage pretraining: one analytic gradient step on gamma, then ridge on the outer layer.

Both stages only ever need, per task, the context vector
``c_t = N^-1 sum_j G[j, N+1] y_j phi(x_j)`` and the query features ``q_t``:
the normalized Mamba scalar is ``s_t = <c_t, gamma * q_t>``.  Tasks are
therefore reduced to a :class:`StageData` table of these vectors once, and the
gradient and ridge solves work on that table.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.linalg

from .embedding import d_tilde, feature_map
from .errors import NumericalError, ValidationError
from .hermite import GatingConstants, LinkFunction
from .predictor import MlpParams, hidden, mlp_forward
from .ssm import MambaParams, context_vector
from .tasks import STAGE1, STAGE2, STAGE2_INIT, FeatureSpace, RngStream, sample_task

ETA_MODES = ("auto", "auto_feature")
DEFAULT_LAMBDA2_GRID = (1e-4, 1e-3, 1e-2, 1e-1, 1.0)
CHECKPOINT_FORMAT = "mambaicl-checkpoint/1"


@dataclass
class TrainConfig:
    """Pretraining hyperparameters.

    ``eta`` is a positive float or one of ``"auto"`` (rescale so that
    ``max|gamma*| = 1``) and ``"auto_feature"`` (rescale so that the largest
    Stage-I scalar ``|s_t|`` is 1).  ``lambda1=None`` means ``1/eta``; the
    automatic modes require it.  ``lambda2`` is a value or a validation grid.
    """

    eta: float | str = "auto"
    lambda1: float | None = None
    lambda2: float | tuple[float, ...] = DEFAULT_LAMBDA2_GRID
    n_pt: int = 2000
    t1: int = 2000
    t2: int = 2000
    m: int = 256
    gamma0_scale: float = 0.5
    gc: GatingConstants = field(default_factory=GatingConstants)
    seed: int = 0
    embedding: str = "quadratic"
    val_fraction: float = 0.2
    kink_eps: float = 1e-9

    def __post_init__(self):
        if isinstance(self.lambda2, (list, tuple)):
            self.lambda2 = tuple(float(v) for v in self.lambda2)
        self.validate()

    def validate(self) -> None:
        problems = []
        if isinstance(self.eta, str):
            if self.eta not in ETA_MODES:
                problems.append(f"eta: unknown mode {self.eta!r} (use a number or one of {ETA_MODES})")
            elif self.lambda1 is not None:
                problems.append("lambda1: automatic eta scaling requires lambda1 = 1/eta (leave it unset)")
        elif not (np.isfinite(self.eta) and self.eta >= 0):
            problems.append(f"eta: must be a nonnegative number, got {self.eta}")
        if self.lambda1 is not None and not (np.isfinite(self.lambda1) and self.lambda1 >= 0):
            problems.append(f"lambda1: must be nonnegative, got {self.lambda1}")
        grid = self.lambda2 if isinstance(self.lambda2, tuple) else (self.lambda2,)
        if not grid or any(not (np.isfinite(v) and v > 0) for v in grid):
            problems.append(f"lambda2: values must be positive, got {self.lambda2}")
        for name in ("n_pt", "t1", "t2", "m"):
            if int(getattr(self, name)) < 1:
                problems.append(f"{name}: must be at least 1, got {getattr(self, name)}")
        if isinstance(self.lambda2, tuple) and len(self.lambda2) > 1 and self.t2 < 2:
            problems.append("t2: a lambda2 grid needs at least 2 tasks for validation")
        if not 0 < self.val_fraction < 1:
            problems.append(f"val_fraction: must lie in (0, 1), got {self.val_fraction}")
        if not np.isfinite(self.gamma0_scale):
            problems.append("gamma0_scale: must be finite")
        if self.embedding not in ("quadratic", "linear"):
            problems.append(f"embedding: unknown kind {self.embedding!r}")
        if problems:
            raise ValidationError(problems)

    @property
    def effective_lambda1(self) -> float | None:
        """lambda1 when given explicitly, ``1/eta`` for a fixed eta, None when eta is automatic."""
        if self.lambda1 is not None:
            return float(self.lambda1)
        if isinstance(self.eta, str):
            return None
        return 1.0 / self.eta if self.eta > 0 else 0.0


def init_params(cfg: TrainConfig, d: int) -> tuple[MambaParams, MlpParams]:
    g = cfg.gamma0_scale
    if cfg.embedding == "linear":
        gamma = np.ones(d)
    else:
        k = d_tilde(d)
        gamma = np.concatenate([[g * g], np.ones(d), np.full(k - 1 - d, g)])
    m = cfg.m
    return MambaParams(gamma, cfg.gc), MlpParams(np.full(m, 1.0 / m), np.ones(m), np.zeros(m))


# --------------------------------------------------------------------------
# per-task reduction


@dataclass
class StageData:
    contexts: np.ndarray  # (T, k)
    qfeats: np.ndarray  # (T, k)
    y: np.ndarray  # (T,)
    betas: np.ndarray  # (T, d)
    queries: np.ndarray  # (T, d)

    def __len__(self):
        return len(self.y)

    def scalars(self, gamma: np.ndarray) -> np.ndarray:
        return np.einsum("tk,tk->t", self.contexts, gamma * self.qfeats)

    def subset(self, idx) -> "StageData":
        return StageData(*(a[idx] for a in (self.contexts, self.qfeats, self.y, self.betas, self.queries)))


def collect_stage_data(
    space: FeatureSpace,
    g: LinkFunction,
    tau: float,
    n: int,
    tasks: int,
    stream: RngStream,
    gc: GatingConstants,
    embedding: str = "quadratic",
    workers: int = 1,
) -> StageData:
    """One prompt per task from ``stream.child(t)``, reduced to (c_t, q_t, y_t)."""
    fmap = feature_map(embedding)

    def one(t):
        batch = sample_task(space, g, tau, n, 1, stream.child(t), task_id=t)
        c = context_vector(fmap(batch.xs), batch.ys, gc)[0]
        return c, fmap(batch.queries)[0], batch.query_labels[0], batch.beta, batch.queries[0]

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(one, range(tasks)))
    else:
        rows = [one(t) for t in range(tasks)]
    cols = list(zip(*rows))
    return StageData(*(np.array(c, dtype=float) for c in cols))


# --------------------------------------------------------------------------
# Stage I


@dataclass
class Stage1Gradient:
    gradient: np.ndarray
    preactivations: np.ndarray
    active: np.ndarray
    near_kink: np.ndarray  # task indices with some |pre-activation| <= kink_eps

    @property
    def activation_rate(self) -> float:
        return float(np.mean(self.active))


def stage1_loss(data: StageData, gamma: np.ndarray, mlp: MlpParams) -> float:
    """L1 = T^-1 sum_t (f_t - y_t)^2."""
    f = mlp_forward(data.scalars(gamma), mlp)
    return float(np.mean((f - data.y) ** 2))


def stage1_gradient(data: StageData, gamma: np.ndarray, mlp: MlpParams, kink_eps: float = 1e-9) -> Stage1Gradient:
    """Full-batch gradient of L1 in gamma (the ReLU subgradient at 0 is 0).

    At the standard init the head is ReLU and the per-task gradient reduces to
    ``1[s_t > 0] * c_t * q_t``.
    """
    s = data.scalars(gamma)
    pre = s[:, None] * mlp.v + mlp.a  # (T, m)
    on = pre > 0
    slope = (on * (mlp.u * mlp.v)).sum(axis=1)  # df/ds
    f = mlp_forward(s, mlp)
    weights = 2.0 / len(data) * (f - data.y) * slope
    grad = np.einsum("t,tk->k", weights, data.contexts * data.qfeats)
    if not np.all(np.isfinite(grad)):
        raise NumericalError("Stage I gradient is not finite")
    near = np.flatnonzero(np.any(np.abs(pre) <= kink_eps, axis=1))
    return Stage1Gradient(grad, s, on.any(axis=1), near)


@dataclass
class Stage1Result:
    gamma_star: np.ndarray
    raw_gradient: np.ndarray
    eta: float
    lambda1: float
    diagnostics: dict


def stage1_update(
    cfg: TrainConfig,
    gradient: np.ndarray,
    gamma0: np.ndarray,
    data: StageData | None = None,
    diagnostics: dict | None = None,
) -> Stage1Result:
    """gamma* = gamma0 - eta (grad + lambda1 gamma0), resolving automatic eta."""
    gradient = np.asarray(gradient, dtype=float)
    if not np.all(np.isfinite(gradient)):
        raise NumericalError("Stage I gradient is not finite")
    if isinstance(cfg.eta, str):
        if cfg.eta == "auto":
            scale = np.max(np.abs(gradient))
        else:
            if data is None:
                raise ValueError("eta='auto_feature' needs the Stage I data")
            scale = np.max(np.abs(data.scalars(gradient)))
        if not scale > 0:
            raise NumericalError(f"cannot auto-scale eta ({cfg.eta}): the Stage I gradient is zero")
        eta, lam = 1.0 / scale, scale
        gamma_star = -gradient / scale
    else:
        eta = float(cfg.eta)
        lam = cfg.effective_lambda1
        gamma_star = gamma0 - eta * (gradient + lam * gamma0)
    return Stage1Result(gamma_star, gradient, eta, lam, dict(diagnostics or {}))


# --------------------------------------------------------------------------
# Stage II


def draw_inner_layer(m: int, stream: RngStream) -> tuple[np.ndarray, np.ndarray]:
    """v ~ Unif{+-1}^m, a ~ Unif[-1, 1]^m, drawn neuron by neuron so widths nest."""
    draws = stream.generator().random((m, 2))
    return np.where(draws[:, 0] < 0.5, -1.0, 1.0), 2.0 * draws[:, 1] - 1.0


@dataclass
class RidgeSolve:
    u: np.ndarray
    kkt_residual: float
    condition: float


def ridge_solve(Phi: np.ndarray, y: np.ndarray, lam: float) -> RidgeSolve:
    """argmin_u T^-1 ||Phi u - y||^2 + lam/2 ||u||^2 via the normal equations."""
    T = len(y)
    M = (2.0 / T) * (Phi.T @ Phi) + lam * np.eye(Phi.shape[1])
    rhs = (2.0 / T) * (Phi.T @ y)
    u = scipy.linalg.solve(M, rhs, assume_a="pos")
    u = u + scipy.linalg.solve(M, rhs - M @ u, assume_a="pos")  # one refinement step
    kkt = float(np.linalg.norm((2.0 / T) * Phi.T @ (Phi @ u - y) + lam * u))
    cond = float(np.linalg.cond(M))
    if not np.all(np.isfinite(u)):
        raise NumericalError(f"ridge solve failed (condition number {cond:.3g})")
    return RidgeSolve(u, kkt, cond)


@dataclass
class Stage2Result:
    u_star: np.ndarray
    v_star: np.ndarray
    a_star: np.ndarray
    train_loss: float
    kkt_residual: float
    chosen_lambda2: float
    condition: float
    path: list[dict] = field(default_factory=list)  # per-lambda2 validation record

    @property
    def mlp(self) -> MlpParams:
        return MlpParams(self.u_star, self.v_star, self.a_star)


def stage2_fit(
    data: StageData,
    gamma_star: np.ndarray,
    cfg: TrainConfig,
    stream: RngStream,
) -> Stage2Result:
    """Ridge on ReLU(v* s + a*) features; a lambda2 grid is chosen on held-out tasks, then refit on all."""
    v, a = draw_inner_layer(cfg.m, stream)
    s = data.scalars(gamma_star)
    Phi = hidden(s, MlpParams(np.zeros(cfg.m), v, a))
    y = data.y
    path = []
    if isinstance(cfg.lambda2, tuple) and len(cfg.lambda2) > 1:
        T = len(y)
        n_val = min(T - 1, max(1, int(round(cfg.val_fraction * T))))
        tr, va = slice(0, T - n_val), slice(T - n_val, T)
        for lam in sorted(cfg.lambda2):
            sol = ridge_solve(Phi[tr], y[tr], lam)
            val = float(np.mean((Phi[va] @ sol.u - y[va]) ** 2))
            path.append(
                {"lambda2": lam, "val_mse": val, "u_norm": float(np.linalg.norm(sol.u)), "kkt_residual": sol.kkt_residual}
            )
        best = min(path, key=lambda rec: (rec["val_mse"], -rec["lambda2"]))
        lam = best["lambda2"]
    else:
        lam = cfg.lambda2[0] if isinstance(cfg.lambda2, tuple) else float(cfg.lambda2)
    sol = ridge_solve(Phi, y, lam)
    loss = float(np.mean((Phi @ sol.u - y) ** 2))
    return Stage2Result(sol.u, v, a, loss, sol.kkt_residual, lam, sol.condition, path)


# --------------------------------------------------------------------------
# full pipeline and checkpoints


@dataclass
class PretrainResult:
    mamba: MambaParams
    mlp: MlpParams
    stage1: Stage1Result
    stage2: Stage2Result
    streams: dict


def pretrain(
    cfg: TrainConfig,
    space: FeatureSpace,
    g: LinkFunction,
    tau: float,
    workers: int = 1,
    stage1_data: StageData | None = None,
) -> PretrainResult:
    root = RngStream(cfg.seed)
    s1, s2, s2i = root.child(STAGE1), root.child(STAGE2), root.child(STAGE2_INIT)
    mp0, hp0 = init_params(cfg, space.d)
    if stage1_data is None:
        stage1_data = collect_stage_data(space, g, tau, cfg.n_pt, cfg.t1, s1, cfg.gc, cfg.embedding, workers)
    grad = stage1_gradient(stage1_data, mp0.gamma, hp0, cfg.kink_eps)
    diag = {
        "activation_rate": grad.activation_rate,
        "near_kink_tasks": [int(i) for i in grad.near_kink],
    }
    st1 = stage1_update(cfg, grad.gradient, mp0.gamma, stage1_data, diag)
    data2 = collect_stage_data(space, g, tau, cfg.n_pt, cfg.t2, s2, cfg.gc, cfg.embedding, workers)
    st2 = stage2_fit(data2, st1.gamma_star, cfg, s2i)
    streams = {"stage1": list(s1.path), "stage2": list(s2.path), "stage2_init": list(s2i.path)}
    return PretrainResult(MambaParams(st1.gamma_star, cfg.gc), st2.mlp, st1, st2, streams)


def train_config_dict(cfg: TrainConfig) -> dict:
    out = asdict(cfg)
    out["gc"] = asdict(cfg.gc)
    if isinstance(cfg.lambda2, tuple):
        out["lambda2"] = list(cfg.lambda2)
    return out


def _floats(v) -> list[float]:
    return [float(t) for t in np.ravel(v)]


def checkpoint_dict(result: PretrainResult, config: dict) -> dict:
    st1, st2 = result.stage1, result.stage2
    return {
        "format": CHECKPOINT_FORMAT,
        "config": config,
        "gamma_star": _floats(result.mamba.gamma),
        "gating": asdict(result.mamba.gc),
        "mlp": {"u": _floats(st2.u_star), "v": _floats(st2.v_star), "a": _floats(st2.a_star)},
        "stage1": {
            "eta": st1.eta,
            "lambda1": st1.lambda1,
            "raw_gradient": _floats(st1.raw_gradient),
            "diagnostics": st1.diagnostics,
        },
        "stage2": {
            "chosen_lambda2": st2.chosen_lambda2,
            "train_loss": st2.train_loss,
            "kkt_residual": st2.kkt_residual,
            "condition": st2.condition,
            "path": st2.path,
        },
        "streams": result.streams,
    }


def dumps_checkpoint(result: PretrainResult, config: dict) -> str:
    return json.dumps(checkpoint_dict(result, config), sort_keys=True, indent=1, allow_nan=False) + "\n"


def save_checkpoint(path, result: PretrainResult, config: dict) -> None:
    Path(path).write_text(dumps_checkpoint(result, config), encoding="utf-8", newline="\n")


@dataclass
class Checkpoint:
    mamba: MambaParams
    mlp: MlpParams
    config: dict
    raw: dict

    @property
    def d_tilde(self) -> int:
        return len(self.mamba.gamma)


def load_checkpoint(path) -> Checkpoint:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ValidationError(f"checkpoint {path}: {exc}") from exc
    if raw.get("format") != CHECKPOINT_FORMAT:
        raise ValidationError(f"checkpoint {path}: unknown format {raw.get('format')!r}")
    gc = GatingConstants(**raw["gating"])
    mlp = MlpParams(raw["mlp"]["u"], raw["mlp"]["v"], raw["mlp"]["a"])
    return Checkpoint(MambaParams(raw["gamma_star"], gc), mlp, raw["config"], raw)


def lambda2_norms(path: Sequence[dict]) -> np.ndarray:
    return np.array([rec["u_norm"] for rec in sorted(path, key=lambda r: r["lambda2"])])
