"""Diagnostics for trained models and the kernel ridge baseline."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .embedding import psi, slot_coordinates
from .errors import NumericalError
from .hermite import (
    MC_SIGMAS,
    GatingConstants,
    HermiteExpansion,
    LinkFunction,
    a_coeffs,
    adaptive_coeffs,
    gated_label,
    generative_exponent,
    information_exponent,
    mc_coeffs,
)
from .tasks import FeatureSpace, PromptBatch, as_generator, sample_feature

# --------------------------------------------------------------------------
# test-time feature learning


@dataclass
class FeatureFitReport:
    ge_used: int
    coeffs: tuple[float, float]
    r_squared: float
    residual_rms: float
    baseline_r_squared: float

    @property
    def margin(self) -> float:
        return self.r_squared - self.baseline_r_squared


def fit_feature_model(s: np.ndarray, t: np.ndarray, ge: int) -> FeatureFitReport:
    """Least squares of ``s`` on ``[1, t**ge]``."""
    if ge not in (1, 2):
        raise ValueError(f"ge must be 1 or 2, got {ge}")
    s = np.asarray(s, dtype=float)
    feat = np.asarray(t, dtype=float) ** ge
    if len(s) < 2 or np.ptp(feat) == 0:
        raise NumericalError("singular design: the feature regressor is constant")
    X = np.column_stack([np.ones_like(feat), feat])
    coef, *_ = np.linalg.lstsq(X, s, rcond=None)
    resid = s - X @ coef
    ss_tot = float(np.sum((s - s.mean()) ** 2))
    ss_res = float(np.sum(resid**2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    base = 0.0 if ss_tot > 0 else 1.0  # the constant-only fit explains no variance
    return FeatureFitReport(ge, (float(coef[0]), float(coef[1])), r2, float(np.sqrt(ss_res / len(s))), base)


def feature_learning_fit(gamma_star: np.ndarray, data, r: int, ge: int) -> FeatureFitReport:
    """Fit ``s = <c, gamma* q>`` against ``(<beta, x>/r)^ge`` over a Stage-style data table."""
    s = data.scalars(np.asarray(gamma_star, dtype=float))
    t = np.einsum("td,td->t", data.betas, data.queries) / r
    return fit_feature_model(s, t, ge)


@dataclass
class AlignmentReport:
    mass_on_feature_slots: float
    uniform_share: float

    @property
    def ratio(self) -> float:
        return self.mass_on_feature_slots / self.uniform_share


def gamma_alignment(gamma_star: np.ndarray, space: FeatureSpace) -> AlignmentReport:
    """Share of |gamma*| on slots whose coordinates all lie in the index set.

    The constant slot is excluded; a cross slot counts only if both of its
    coordinates are feature coordinates.
    """
    gamma_star = np.abs(np.asarray(gamma_star, dtype=float))
    slots = slot_coordinates(space.d)
    if len(gamma_star) != len(slots):
        raise ValueError(f"gamma has {len(gamma_star)} slots, expected {len(slots)} for d={space.d}")
    feat = set(space.index_set)
    mask = np.array([bool(c) and set(c) <= feat for c in slots])
    nonconst = np.array([bool(c) for c in slots])
    total = gamma_star[nonconst].sum()
    if total == 0:
        raise NumericalError("gamma is zero on every non-constant slot")
    return AlignmentReport(float(gamma_star[mask].sum() / total), float(mask.sum() / nonconst.sum()))


# --------------------------------------------------------------------------
# analytic prediction of gamma*


def indicator_quadratic(a, gamma0_scale: float, he2_weight: float = 0.5) -> np.ndarray:
    """Coefficients (of 1, z, z^2) of a0 g^2 + a1 z + w a2 g He_2(z)."""
    a0, a1, a2 = (float(t) for t in a[:3])
    g = gamma0_scale
    q2 = he2_weight * a2 * g
    return np.array([a0 * g * g - q2, a1, q2])


def b_coeffs(
    g: LinkFunction,
    a,
    gamma0_scale: float,
    p_max: int = 2,
    estimator: str = "mc",
    samples: int = 10_000_000,
    rng=None,
    he2_weight: float = 0.5,
) -> HermiteExpansion:
    """Raw Hermite coefficients of B(z) = g(z) 1[a0 g0^2 + a1 z + w a2 g0 He_2(z) > 0].

    ``estimator="quadrature"`` integrates piecewise between the roots of the
    quadratic with adaptive quadrature; ``"mc"`` samples from ``rng``.
    """
    c = indicator_quadratic(a, gamma0_scale, he2_weight)

    def B(z):
        z = np.asarray(z, dtype=float)
        return g(z) * ((c[0] + c[1] * z + c[2] * z * z) > 0)

    if estimator == "mc":
        return mc_coeffs(B, p_max, samples, as_generator(rng))
    if estimator == "quadrature":
        roots = np.roots(c[::-1]) if np.any(c[1:] != 0) else []
        cuts = [float(r.real) for r in np.atleast_1d(roots) if abs(r.imag) < 1e-12]
        return adaptive_coeffs(B, p_max, cuts)
    raise ValueError(f"unknown estimator {estimator!r}")


def expected_psi_product(a, b, space: FeatureSpace, samples: int, rng) -> np.ndarray:
    """Monte-Carlo E_beta[psi(beta, a) * psi(beta, b)] over beta ~ Unif(S_r)."""
    gen = as_generator(rng)
    betas = np.vstack([sample_feature(space, gen) for _ in range(samples)])
    prod = psi(betas, *a[:3]) * psi(betas, *b[:3])
    return prod.mean(axis=0)


@dataclass
class GammaStarPrediction:
    gamma: np.ndarray
    a: HermiteExpansion
    b: HermiteExpansion


def predict_gamma_star(
    g: LinkFunction,
    gc: GatingConstants,
    gamma0_scale: float,
    space: FeatureSpace,
    eta: float,
    samples: int,
    rng,
    truncation: float | None = None,
    b_estimator: str = "quadrature",
    b_samples: int = 2_000_000,
    he2_weight: float = 0.5,
) -> GammaStarPrediction:
    """2 eta E_beta[psi(beta, a) * psi(beta, b)] with a from the gated label and b from B."""
    gen = as_generator(rng)
    a = a_coeffs(g, gc, truncation=truncation, p_max=2)
    b = b_coeffs(g, a.coeffs, gamma0_scale, 2, b_estimator, b_samples, gen, he2_weight)
    vec = 2.0 * eta * expected_psi_product(a.coeffs, b.coeffs, space, samples, gen)
    return GammaStarPrediction(vec, a, b)


def cosine(u: np.ndarray, v: np.ndarray) -> float:
    u, v = np.ravel(u), np.ravel(v)
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        raise NumericalError("cosine of a zero vector")
    return float(u @ v / (nu * nv))


# --------------------------------------------------------------------------
# exponent reduction


@dataclass
class ExponentReductionReport:
    estimates: np.ndarray  # H(g sigma(g/rho + b), p) for p = 0..p_max
    std_errors: np.ndarray
    first_significant: int | None
    generative_exponent: int
    information_exponent: int

    @property
    def conclusive(self) -> bool:
        return self.first_significant is not None

    @property
    def agrees(self) -> bool:
        return self.first_significant == self.generative_exponent


def exponent_reduction_report(
    g: LinkFunction,
    gc: GatingConstants,
    samples: int,
    rng,
    sigmas: float = MC_SIGMAS,
) -> ExponentReductionReport:
    """First Hermite index p >= 1 of g sigma(g/rho + b) that is significant at ``sigmas`` standard errors."""
    ie = information_exponent(g)
    ge = generative_exponent(g)
    p_max = max(ie, 2)
    est = mc_coeffs(gated_label(g, gc), p_max, samples, as_generator(rng))
    sig = np.abs(est.coeffs) > sigmas * est.estimator_error
    first = next((p for p in range(1, p_max + 1) if sig[p]), None)
    return ExponentReductionReport(est.coeffs, est.estimator_error, first, ge, ie)


# --------------------------------------------------------------------------
# kernel ridge baseline


class IllConditionedWarning(RuntimeWarning):
    pass


def rbf_kernel(x: np.ndarray, y: np.ndarray, bandwidth: float) -> np.ndarray:
    """exp(-|x - y|^2 / (2 h^2)) over the last axis, broadcasting leading axes."""
    sq = (
        np.sum(x * x, axis=-1)[..., :, None]
        + np.sum(y * y, axis=-1)[..., None, :]
        - 2.0 * np.einsum("...id,...jd->...ij", x, y)
    )
    return np.exp(-np.maximum(sq, 0.0) / (2.0 * bandwidth * bandwidth))


def kernel_ridge_batch(
    xs: np.ndarray, ys: np.ndarray, queries: np.ndarray, bandwidth: float = 1.0, ridge: float = 1.0
) -> np.ndarray:
    """Predictions for ``P`` prompts: ``xs (P, N, d)``, ``ys (P, N)``, ``queries (P, d)``."""
    if bandwidth <= 0:
        raise ValueError("bandwidth must be positive")
    if ridge < 0:
        raise ValueError("ridge must be nonnegative")
    K = rbf_kernel(xs, xs, bandwidth) + ridge * np.eye(xs.shape[-2])
    if ridge == 0:
        cond = np.linalg.cond(K)
        if np.any(~np.isfinite(cond)) or np.max(cond) > 1e12:
            warnings.warn(f"kernel matrix is ill-conditioned (cond {np.max(cond):.3g})", IllConditionedWarning)
    try:
        alpha = np.linalg.solve(K, ys[..., None])[..., 0]
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"kernel system is singular: {exc}") from exc
    kq = rbf_kernel(xs, queries[..., None, :], bandwidth)[..., 0]
    return np.einsum("...n,...n->...", kq, alpha)


def kernel_ridge_predict(
    xs: np.ndarray, ys: np.ndarray, query: np.ndarray, bandwidth: float = 1.0, ridge: float = 1.0, coords=None
) -> float:
    xs, query = np.asarray(xs, dtype=float), np.asarray(query, dtype=float)
    if coords is not None:
        xs, query = xs[:, list(coords)], query[list(coords)]
    return float(kernel_ridge_batch(xs[None], np.asarray(ys, dtype=float)[None], query[None], bandwidth, ridge)[0])


@dataclass
class KernelRidgeModel:
    """Kernel ridge on each prompt's context, optionally on a coordinate subset."""

    bandwidth: float = 1.0
    ridge: float = 1.0
    coords: tuple[int, ...] | None = None

    def __call__(self, batch: PromptBatch) -> np.ndarray:
        xs, q = batch.xs, batch.queries
        if self.coords is not None:
            idx = list(self.coords)
            xs, q = xs[..., idx], q[..., idx]
        return kernel_ridge_batch(xs, batch.ys, q, self.bandwidth, self.ridge)


def dominant_degree(gamma: np.ndarray, d: int) -> int:
    """1 if the linear block of ``gamma`` outweighs the quadratic block (in l2), else 2."""
    gamma = np.asarray(gamma, dtype=float)
    return 1 if np.linalg.norm(gamma[1 : 1 + d]) >= np.linalg.norm(gamma[1 + d :]) else 2
