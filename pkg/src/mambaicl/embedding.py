"""Degree-2 Hermite feature map and prompt embedding.

Feature ordering for ``x`` in R^d (length ``1 + d + d(d+1)/2``)::

    [1, x_1..x_d, (x_1^2-1)/sqrt2 .. (x_d^2-1)/sqrt2, x_i x_j for i<j lexicographic]
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

SQRT2 = np.sqrt(2.0)


def d_tilde(d: int, kind: str = "quadratic") -> int:
    if kind == "linear":
        return d
    return 1 + d + d * (d + 1) // 2


@lru_cache(maxsize=64)
def _pairs(d: int) -> tuple[np.ndarray, np.ndarray]:
    return np.triu_indices(d, k=1)


def phi(x: np.ndarray) -> np.ndarray:
    """Feature map applied over the last axis of ``x``."""
    x = np.asarray(x, dtype=float)
    d = x.shape[-1]
    i, j = _pairs(d)
    ones = np.ones(x.shape[:-1] + (1,))
    return np.concatenate([ones, x, (x * x - 1.0) / SQRT2, x[..., i] * x[..., j]], axis=-1)


def phi_linear(x: np.ndarray) -> np.ndarray:
    return np.asarray(x, dtype=float)


def feature_map(kind: str):
    if kind == "quadratic":
        return phi
    if kind == "linear":
        return phi_linear
    raise ValueError(f"unknown embedding {kind!r}")


def psi(theta: np.ndarray, c0: float, c1: float, c2: float) -> np.ndarray:
    """[c0; c1 theta; c2 theta^2 / sqrt2; c2 theta_i theta_j (i<j)] in phi's ordering."""
    theta = np.asarray(theta, dtype=float)
    i, j = _pairs(theta.shape[-1])
    c0v = np.full(theta.shape[:-1] + (1,), float(c0))
    return np.concatenate(
        [c0v, c1 * theta, c2 * theta * theta / SQRT2, c2 * theta[..., i] * theta[..., j]], axis=-1
    )


def slot_coordinates(d: int) -> list[tuple[int, ...]]:
    """Raw coordinates touched by each phi slot (the constant slot touches none)."""
    i, j = _pairs(d)
    slots: list[tuple[int, ...]] = [()]
    slots += [(k,) for k in range(d)]
    slots += [(k,) for k in range(d)]
    slots += [(int(a), int(b)) for a, b in zip(i, j)]
    return slots


@dataclass
class EmbeddedPrompt:
    """Columns z_1..z_{N+1} as a ``(d_tilde + 1, N + 1)`` matrix."""

    z_cols: np.ndarray

    @property
    def d_tilde(self) -> int:
        return self.z_cols.shape[0] - 1

    @property
    def n(self) -> int:
        return self.z_cols.shape[1] - 1

    @property
    def features(self) -> np.ndarray:
        return self.z_cols[:-1]

    @property
    def labels(self) -> np.ndarray:
        return self.z_cols[-1]


def embed(xs: np.ndarray, ys: np.ndarray, query: np.ndarray, kind: str = "quadratic") -> EmbeddedPrompt:
    fmap = feature_map(kind)
    feats = fmap(np.vstack([xs, query[None, :]]))
    lab = np.append(np.asarray(ys, dtype=float), 0.0)
    return EmbeddedPrompt(np.vstack([feats.T, lab[None, :]]))


def embed_prompt(p, kind: str = "quadratic") -> EmbeddedPrompt:
    """Embed a :class:`~mambaicl.tasks.Prompt`; the query label is never read."""
    return embed(p.xs, p.ys, p.query, kind)
