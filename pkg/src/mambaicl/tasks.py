"""Single-index tasks and in-context prompts with reproducible random streams.

Every random draw comes from an :class:`RngStream`, a master seed plus an
integer path such as ``(stage, task, role)``.  The path is fed to numpy's
``SeedSequence`` as its spawn key, so a stream depends only on its own
coordinates and never on how many other streams were used before it or on
which worker evaluates it.

Inputs are drawn coordinate-major (``d`` rows of ``n`` samples, transposed),
so prompts that differ only in the ambient dimension share the draws of their
leading coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .hermite import LinkFunction

# stage ids used in stream paths
STAGE1 = 1
STAGE2 = 2
STAGE2_INIT = 3
EVAL = 4
DIAGNOSE = 5
ORACLE = 6

# role ids
ROLE_BETA = 0
ROLE_X = 1
ROLE_NOISE = 2


@dataclass(frozen=True)
class RngStream:
    master_seed: int
    path: tuple[int, ...] = ()

    def __post_init__(self):
        if not 0 <= int(self.master_seed) < 2**64:
            raise ValueError("master_seed must be a 64-bit unsigned integer")
        object.__setattr__(self, "path", tuple(int(p) for p in self.path))

    def child(self, *ids: int) -> "RngStream":
        return RngStream(self.master_seed, self.path + tuple(ids))

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(entropy=int(self.master_seed), spawn_key=self.path)
        return np.random.Generator(np.random.PCG64(ss))


def as_generator(rng) -> np.random.Generator:
    if isinstance(rng, RngStream):
        return rng.generator()
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


@dataclass(frozen=True)
class FeatureSpace:
    """Ambient dimension ``d`` with the feature support ``index_set`` (0-based)."""

    d: int
    r: int
    index_set: tuple[int, ...] = None

    def __post_init__(self):
        d, r = int(self.d), int(self.r)
        if not 1 <= r <= d:
            raise ValueError(f"need 1 <= r <= d, got r={r}, d={d}")
        idx = tuple(range(r)) if self.index_set is None else tuple(sorted(int(i) for i in self.index_set))
        if len(idx) != r or len(set(idx)) != r:
            raise ValueError(f"index_set must hold {r} distinct coordinates, got {idx}")
        if idx[0] < 0 or idx[-1] >= d:
            raise ValueError(f"index_set {idx} out of range for d={d}")
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "index_set", idx)

    @property
    def indices(self) -> np.ndarray:
        return np.asarray(self.index_set, dtype=int)


def sample_feature(space: FeatureSpace, rng) -> np.ndarray:
    """beta ~ Unif(S_r): normalized Gaussian on the index set, zero elsewhere."""
    gen = as_generator(rng)
    while True:
        v = gen.standard_normal(space.r)
        norm = np.linalg.norm(v)
        if norm > 0:
            break
    beta = np.zeros(space.d)
    beta[space.indices] = v / norm
    return beta


def labels(beta: np.ndarray, g: LinkFunction, tau: float, xs: np.ndarray, gen: np.random.Generator) -> np.ndarray:
    signs = gen.integers(0, 2, size=xs.shape[:-1]) * 2 - 1
    return g(xs @ beta) + tau * signs


def sample_inputs(d: int, shape: tuple[int, ...], gen: np.random.Generator) -> np.ndarray:
    """Standard Gaussian inputs of shape ``shape + (d,)``, coordinate-major."""
    n = int(np.prod(shape))
    return gen.standard_normal((d, n)).T.reshape(shape + (d,))


def sample_example(beta: np.ndarray, g: LinkFunction, tau: float, rng) -> tuple[np.ndarray, float]:
    gen = as_generator(rng)
    x = sample_inputs(len(beta), (), gen)
    return x, float(labels(beta, g, tau, x, gen))


@dataclass
class Prompt:
    xs: np.ndarray
    ys: np.ndarray
    query: np.ndarray
    query_label: float
    beta: np.ndarray

    @property
    def n(self) -> int:
        return len(self.ys)


@dataclass
class PromptBatch:
    """``P`` prompts of one task: contexts ``xs (P, N, d)``, ``ys (P, N)``,
    queries ``(P, d)`` and their labels ``(P,)``, all sharing ``beta``."""

    xs: np.ndarray
    ys: np.ndarray
    queries: np.ndarray
    query_labels: np.ndarray
    beta: np.ndarray
    task_id: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.ys.shape[1]

    def __len__(self):
        return self.ys.shape[0]

    def prompt(self, i: int) -> Prompt:
        return Prompt(self.xs[i], self.ys[i], self.queries[i], float(self.query_labels[i]), self.beta)


def sample_task(
    space: FeatureSpace,
    g: LinkFunction,
    tau: float,
    n: int,
    prompts: int,
    stream: RngStream,
    task_id: int = 0,
) -> PromptBatch:
    """``prompts`` independent prompts of context length ``n`` sharing one beta.

    beta, inputs and label noise use the ``stream`` children ``ROLE_BETA``,
    ``ROLE_X`` and ``ROLE_NOISE``.
    """
    if n < 1:
        raise ValueError("context length must be at least 1")
    if prompts < 1:
        raise ValueError("need at least one prompt per task")
    beta = sample_feature(space, stream.child(ROLE_BETA))
    x_all = sample_inputs(space.d, (prompts, n + 1), stream.child(ROLE_X).generator())
    y_all = labels(beta, g, tau, x_all, stream.child(ROLE_NOISE).generator())
    return PromptBatch(
        xs=x_all[:, :n],
        ys=y_all[:, :n],
        queries=x_all[:, n],
        query_labels=y_all[:, n],
        beta=beta,
        task_id=task_id,
    )


def sample_prompt(space: FeatureSpace, g: LinkFunction, tau: float, n: int, stream: RngStream) -> Prompt:
    return sample_task(space, g, tau, n, 1, stream).prompt(0)


def dump_batches(path, batches) -> None:
    """Write prompts as tab-separated records.

    One line per prompt with columns ``task_id, beta, xs, ys, query,
    query_label``; vector fields are space-separated floats in ``repr``
    precision, ``xs`` row-major over (N, d).
    """
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("task_id\tbeta\txs\tys\tquery\tquery_label\n")
        for batch in batches:
            beta = _vec(batch.beta)
            for i in range(len(batch)):
                fh.write(
                    f"{batch.task_id}\t{beta}\t{_vec(batch.xs[i].ravel())}\t{_vec(batch.ys[i])}"
                    f"\t{_vec(batch.queries[i])}\t{float(batch.query_labels[i])!r}\n"
                )


def load_batches(path) -> list[Prompt]:
    prompts = []
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n").split("\t")
        if header != ["task_id", "beta", "xs", "ys", "query", "query_label"]:
            raise ValueError(f"unexpected dataset header {header}")
        for line in fh:
            _, beta, xs, ys, query, label = line.rstrip("\n").split("\t")
            beta = np.array(beta.split(), dtype=float)
            ys = np.array(ys.split(), dtype=float)
            xs = np.array(xs.split(), dtype=float).reshape(len(ys), len(beta))
            prompts.append(Prompt(xs, ys, np.array(query.split(), dtype=float), float(label), beta))
    return prompts


def _vec(v) -> str:
    return " ".join(repr(float(t)) for t in np.ravel(v))
