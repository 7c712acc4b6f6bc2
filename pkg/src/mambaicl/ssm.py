"""One-layer selective SSM with a scalar decay A = -I.

The discretization collapses to a per-token gate ``s_l = sigmoid(w.z_l + b)``:
the hidden state decays by ``1 - s_l`` and receives ``s_l * W_B z_l * z_l[i]``.
Unrolling gives the gated-linear-attention form

    o_l = sum_{j<=l} G[j, l] z_j z_j^T W_B^T W_C z_l,
    G[j, l] = s_j prod_{k=j+1..l} (1 - s_k).

Training only ever needs the last coordinate of the last output under the
simplified parameters ``W_B^T W_C = diag(gamma, 0)``, ``w = [0; 1/rho]``;
:func:`mamba_scalar` and the batched helpers compute exactly that.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, log_expit

from .embedding import EmbeddedPrompt
from .errors import NumericalError
from .hermite import GatingConstants


@dataclass
class MambaParams:
    gamma: np.ndarray
    gc: GatingConstants

    def __post_init__(self):
        self.gamma = np.asarray(self.gamma, dtype=float)
        if not np.all(np.isfinite(self.gamma)):
            raise ValueError("gamma must be finite")

    def gate_vector(self) -> np.ndarray:
        w = np.zeros(len(self.gamma) + 1)
        w[-1] = 1.0 / self.gc.rho
        return w


@dataclass
class GeneralMambaParams:
    W_B: np.ndarray
    W_C: np.ndarray
    w: np.ndarray
    b: float

    def __post_init__(self):
        self.W_B = np.atleast_2d(np.asarray(self.W_B, dtype=float))
        self.W_C = np.atleast_2d(np.asarray(self.W_C, dtype=float))
        self.w = np.asarray(self.w, dtype=float)
        if self.W_B.shape != self.W_C.shape:
            raise ValueError(f"W_B {self.W_B.shape} and W_C {self.W_C.shape} differ in shape")
        if self.w.shape != (self.W_B.shape[1],):
            raise ValueError(f"w must have length {self.W_B.shape[1]}, got {self.w.shape}")

    @property
    def d_h(self) -> int:
        return self.W_B.shape[0]

    @classmethod
    def from_simplified(cls, p: MambaParams) -> "GeneralMambaParams":
        """W_B = I, W_C = diag(gamma, 0): the simplest factorization of the product."""
        k = len(p.gamma) + 1
        return cls(np.eye(k), np.diag(np.append(p.gamma, 0.0)), p.gate_vector(), p.gc.b)


def gating_matrix(args: np.ndarray) -> np.ndarray:
    """G[j, l] for gate pre-activations ``args`` (upper triangle j <= l, zero below)."""
    args = np.asarray(args, dtype=float)
    log_keep = log_expit(-args)
    cum = np.concatenate([[0.0], np.cumsum(log_keep)])
    # sum_{k=j+1..l} log(1 - s_k) = cum[l+1] - cum[j+1]
    expo = cum[None, 1:] - cum[1:, None] + log_expit(args)[:, None]
    L = len(args)
    return np.where(np.triu(np.ones((L, L), dtype=bool)), np.exp(np.minimum(expo, 0.0)), 0.0)


def gate_arguments(Z: EmbeddedPrompt, w: np.ndarray, b: float) -> np.ndarray:
    return w @ Z.z_cols + b


def gating_weights(Z: EmbeddedPrompt, gc: GatingConstants) -> np.ndarray:
    """G[j, l] under the fixed gate w = [0; 1/rho]: arguments are y_j/rho + b."""
    return gating_matrix(Z.labels / gc.rho + gc.b)


def recurrence_forward(Z: EmbeddedPrompt, p: GeneralMambaParams) -> np.ndarray:
    """Outputs o_1..o_{N+1} (columns) by running the discretized recurrence."""
    zc = Z.z_cols
    channels, L = zc.shape
    H = np.zeros((channels, p.d_h))
    out = np.empty((channels, L))
    for l in range(L):
        z = zc[:, l]
        u = float(p.w @ z + p.b)
        decay = float(expit(-u))  # exp(-softplus(u))
        inject = float(expit(u))
        H = decay * H + inject * np.outer(z, p.W_B @ z)
        if not np.all(np.isfinite(H)):
            raise NumericalError(f"non-finite hidden state at token {l + 1}")
        out[:, l] = H @ (p.W_C @ z)
    return out


def closed_form_outputs(Z: EmbeddedPrompt, p: GeneralMambaParams) -> np.ndarray:
    zc = Z.z_cols
    G = gating_matrix(gate_arguments(Z, p.w, p.b))
    S = zc.T @ (p.W_B.T @ p.W_C) @ zc  # S[j, l] = z_j^T W_B^T W_C z_l
    return zc @ (G * S)


def mamba_scalar(Z: EmbeddedPrompt, p: MambaParams) -> float:
    """sum_j G[j, N+1] y_j <phi(x_j), gamma * phi(x)>."""
    feats, ys = Z.features, Z.labels
    g_last = gating_weights(Z, p.gc)[:, -1]
    q = p.gamma * feats[:, -1]
    return float(np.sum(g_last[:-1] * ys[:-1] * (feats[:, :-1].T @ q)))


# --------------------------------------------------------------------------
# batched scalar path


def query_gates(ys: np.ndarray, gc: GatingConstants) -> np.ndarray:
    """G[j, N+1] for context labels ``ys`` of shape ``(..., N)``."""
    args = ys / gc.rho + gc.b
    log_keep = log_expit(-args)
    # suffix sums over k = j+1..N, then the query token's own keep factor
    suffix = np.flip(np.cumsum(np.flip(log_keep, -1), -1), -1) - log_keep
    return np.exp(log_expit(args) + suffix + log_expit(-gc.b))


def context_vector(feats: np.ndarray, ys: np.ndarray, gc: GatingConstants) -> np.ndarray:
    """N^-1 sum_j G[j, N+1] y_j phi(x_j); ``feats`` is ``(..., N, d_tilde)``."""
    w = query_gates(ys, gc) * ys
    return np.einsum("...n,...nk->...k", w, feats) / ys.shape[-1]


def normalized_scalar(feats: np.ndarray, ys: np.ndarray, qfeats: np.ndarray, gamma: np.ndarray, gc: GatingConstants):
    """N^-1 * mamba_scalar over a batch: ``<context_vector, gamma * phi(query)>``."""
    c = context_vector(feats, ys, gc)
    return np.einsum("...k,...k->...", c, gamma * qfeats)
