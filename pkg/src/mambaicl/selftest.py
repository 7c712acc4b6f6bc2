"""Fast invariant checks runnable from the command line without pytest."""

from __future__ import annotations

import math

import numpy as np

from .embedding import embed
from .hermite import LinkFunction, gauss_hermite_inner, generative_exponent, he, information_exponent
from .predictor import MlpParams
from .pretraining import StageData, draw_inner_layer, ridge_solve, stage1_gradient, stage1_loss
from .ssm import GeneralMambaParams, closed_form_outputs, gating_matrix, recurrence_forward
from .tasks import RngStream


def _random_prompt(gen, d, n):
    return embed(gen.standard_normal((n, d)), gen.standard_normal(n), gen.standard_normal(d))


def check_recurrence(gen) -> tuple[bool, str]:
    worst = 0.0
    for d, n, dh in [(2, 1, 2), (2, 4, 6), (4, 16, 6), (4, 4, 2)]:
        Z = _random_prompt(gen, d, n)
        k = Z.z_cols.shape[0]
        p = GeneralMambaParams(gen.standard_normal((dh, k)), gen.standard_normal((dh, k)), gen.standard_normal(k) * 0.3, -1.0)
        worst = max(worst, float(np.max(np.abs(recurrence_forward(Z, p) - closed_form_outputs(Z, p)))))
    return worst < 1e-10, f"max |recurrence - closed form| = {worst:.2e}"


def check_partition(gen) -> tuple[bool, str]:
    args = gen.standard_normal(12) * 2 - 1
    G = gating_matrix(args)
    keep = np.cumprod(1 - 1 / (1 + np.exp(-args)))
    err = float(np.max(np.abs(G.sum(axis=0) + keep - 1)))
    return err < 1e-12, f"max partition error = {err:.2e}"


def check_orthonormality(gen) -> tuple[bool, str]:
    err = max(
        abs(gauss_hermite_inner(lambda z, i=i: he(i, z), j, 12) - (math.factorial(i) if i == j else 0.0))
        for i in range(9)
        for j in range(9)
    )
    return err < 1e-8, f"max |E[He_i He_j] - i! delta_ij| = {err:.2e}"


def check_exponents(gen) -> tuple[bool, str]:
    cases = [("he3", 1, 3), ("he4", 2, 4), ("he2", 2, 2), ("he1", 1, 1)]
    ok = all(
        generative_exponent(LinkFunction.preset(n)) == ge and information_exponent(LinkFunction.preset(n)) == ie
        for n, ge, ie in cases
    )
    return ok, "exponents of single Hermite modes"


def check_stage1_gradient(gen) -> tuple[bool, str]:
    T, k = 20, 10
    data = StageData(gen.standard_normal((T, k)), gen.standard_normal((T, k)), gen.standard_normal(T), np.zeros((T, 3)), np.zeros((T, 3)))
    m = 4
    mlp = MlpParams(np.full(m, 1 / m), np.ones(m), np.zeros(m))
    gamma = gen.standard_normal(k)
    grad = stage1_gradient(data, gamma, mlp).gradient
    h = 1e-6
    fd = np.array(
        [(stage1_loss(data, gamma + h * e, mlp) - stage1_loss(data, gamma - h * e, mlp)) / (2 * h) for e in np.eye(k)]
    )
    rel = float(np.linalg.norm(fd - grad) / np.linalg.norm(grad))
    return rel < 1e-5, f"finite-difference relative error = {rel:.2e}"


def check_ridge(gen) -> tuple[bool, str]:
    v, a = draw_inner_layer(16, RngStream(0, (99,)))
    s = gen.standard_normal(50)
    Phi = np.maximum(np.outer(s, v) + a, 0)
    worst = max(ridge_solve(Phi, gen.standard_normal(50), lam).kkt_residual for lam in (1e-4, 1e-2, 1.0))
    return worst < 1e-8, f"max KKT residual = {worst:.2e}"


CHECKS = [
    ("recurrence_closed_form", check_recurrence),
    ("gating_partition", check_partition),
    ("hermite_orthonormality", check_orthonormality),
    ("exponent_classifiers", check_exponents),
    ("stage1_gradient", check_stage1_gradient),
    ("ridge_kkt", check_ridge),
]


def run_selftest(seed: int = 0, echo=print) -> bool:
    gen = np.random.default_rng(seed)
    all_ok = True
    for name, fn in CHECKS:
        ok, detail = fn(gen)
        all_ok &= ok
        echo(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
    return all_ok

