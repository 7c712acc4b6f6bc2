"""Probabilists' Hermite machinery under the standard Gaussian measure.

Two coefficient conventions appear throughout the package:

* orthonormal: ``g(z) = sum_k c_k He_k(z) / sqrt(k!)`` -- how :class:`LinkFunction`
  stores a link, so that ``E[g^2] = sum c_k^2``;
* raw: ``H(h, k) = E[h(z) He_k(z)]``, so that ``h = sum_k H(h, k) He_k / k!``.

They are related by ``H(g, k) = c_k * sqrt(k!)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.integrate
from scipy.special import expit

from .errors import NumericalError

MAX_ORDER = 64
QUAD_TOL = 1e-8
MC_SIGMAS = 5.0
ADAPTIVE_BOUND = 12.0
SQRT_2PI = math.sqrt(2.0 * math.pi)

RealFn = Callable[[np.ndarray], np.ndarray]


def he(k: int, z):
    """He_k(z) by the three-term recurrence He_{k+1} = z He_k - k He_{k-1}."""
    if k < 0 or k > MAX_ORDER:
        raise ValueError(f"Hermite order must be in [0, {MAX_ORDER}], got {k}")
    z = np.asarray(z, dtype=float)
    prev = np.ones_like(z)
    if k == 0:
        return prev if prev.ndim else float(prev)
    cur = z.copy()
    for j in range(1, k):
        prev, cur = cur, z * cur - j * prev
    return cur if cur.ndim else float(cur)


def he_table(p_max: int, z: np.ndarray) -> np.ndarray:
    """Rows He_0(z) .. He_{p_max}(z), shape ``(p_max + 1,) + z.shape``."""
    if p_max < 0 or p_max > MAX_ORDER:
        raise ValueError(f"Hermite order must be in [0, {MAX_ORDER}], got {p_max}")
    z = np.asarray(z, dtype=float)
    out = np.empty((p_max + 1,) + z.shape)
    out[0] = 1.0
    if p_max >= 1:
        out[1] = z
    for j in range(1, p_max):
        out[j + 1] = z * out[j] - j * out[j - 1]
    return out


def sigmoid(x):
    return expit(x)


# --------------------------------------------------------------------------
# link functions


@dataclass(frozen=True)
class LinkFunction:
    """Polynomial link stored by its orthonormal Hermite coefficients."""

    hermite_coeffs: tuple[float, ...]
    zero_tol: float = 1e-12

    def __post_init__(self):
        coeffs = tuple(float(c) for c in self.hermite_coeffs)
        if not coeffs:
            raise ValueError("link function needs at least one coefficient")
        if len(coeffs) - 1 > MAX_ORDER:
            raise ValueError(f"link degree above {MAX_ORDER} is not supported")
        if not all(math.isfinite(c) for c in coeffs):
            raise ValueError("link coefficients must be finite")
        object.__setattr__(self, "hermite_coeffs", coeffs)

    @property
    def degree(self) -> int:
        nz = [k for k, c in enumerate(self.hermite_coeffs) if abs(c) > self.zero_tol]
        if not nz:
            raise ValueError("zero link function has no degree")
        return nz[-1]

    @property
    def coeffs(self) -> np.ndarray:
        return np.asarray(self.hermite_coeffs)

    def raw_coeffs(self) -> np.ndarray:
        """H(g, k) = E[g He_k] for k = 0..len-1."""
        k = np.arange(len(self.hermite_coeffs))
        return self.coeffs * np.sqrt([math.factorial(int(i)) for i in k])

    def is_normalized(self, tol: float = 1e-10) -> bool:
        c = self.coeffs
        return abs(c[0]) <= tol and abs(float(c @ c) - 1.0) <= tol

    def normalized(self) -> "LinkFunction":
        c = self.coeffs.copy()
        c[0] = 0.0
        norm = math.sqrt(float(c @ c))
        if norm <= self.zero_tol:
            raise ValueError("link function is constant and cannot be normalized")
        return LinkFunction(tuple(c / norm), self.zero_tol)

    def __call__(self, z):
        z = np.asarray(z, dtype=float)
        c = self.coeffs
        table = he_table(len(c) - 1, z)
        scale = c / np.sqrt([math.factorial(k) for k in range(len(c))])
        return np.tensordot(scale, table, axes=1)

    @classmethod
    def from_raw(cls, raw: Sequence[float], normalize: bool = True) -> "LinkFunction":
        """Build from H(g, k) values (coefficients of He_k / k!)."""
        raw = np.asarray(raw, dtype=float)
        c = raw / np.sqrt([math.factorial(k) for k in range(len(raw))])
        g = cls(tuple(c))
        return g.normalized() if normalize else g

    @classmethod
    def single_mode(cls, k: int) -> "LinkFunction":
        """He_k / sqrt(k!)."""
        c = [0.0] * (k + 1)
        c[k] = 1.0
        return cls(tuple(c))

    @classmethod
    def preset(cls, name: str) -> "LinkFunction":
        name = name.strip().lower()
        if name.startswith("he") and name[2:].isdigit():
            return cls.single_mode(int(name[2:]))
        raise ValueError(f"unknown link preset {name!r} (expected he<k>)")

    def is_even(self, tol: float = QUAD_TOL) -> bool:
        return all(abs(c) <= tol for c in self.hermite_coeffs[1::2])


@dataclass(frozen=True)
class GatingConstants:
    """Fixed gate scale ``rho``, gate bias ``b`` and label-noise level ``tau``."""

    rho: float = 2.0
    b: float = -4.0
    tau: float = 0.1

    def __post_init__(self):
        if not (self.rho > 0 and math.isfinite(self.rho)):
            raise ValueError(f"rho must be positive, got {self.rho}")
        if not math.isfinite(self.b):
            raise ValueError("gate bias b must be finite")
        if not (self.tau >= 0 and math.isfinite(self.tau)):
            raise ValueError(f"tau must be nonnegative, got {self.tau}")


@dataclass
class HermiteExpansion:
    """Raw coefficients H(h, 0..max_order) with per-coefficient error estimates."""

    coeffs: np.ndarray
    estimator_error: np.ndarray = field(default=None)

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=float)
        if self.estimator_error is None:
            self.estimator_error = np.zeros_like(self.coeffs)
        self.estimator_error = np.asarray(self.estimator_error, dtype=float)
        if self.estimator_error.shape != self.coeffs.shape:
            raise ValueError("coeffs and estimator_error must have the same length")
        if np.any(self.estimator_error < 0):
            raise ValueError("estimator errors must be nonnegative")

    @property
    def max_order(self) -> int:
        return len(self.coeffs) - 1

    def __getitem__(self, p):
        return self.coeffs[p]

    def significant(self, sigmas: float = MC_SIGMAS, tol: float = QUAD_TOL) -> np.ndarray:
        """Mask of coefficients distinguishable from zero.

        Exact estimates (error 0) are compared with ``tol``; noisy ones with
        ``sigmas`` standard errors.
        """
        thresh = np.where(self.estimator_error > 0, sigmas * self.estimator_error, tol)
        return np.abs(self.coeffs) > thresh


# --------------------------------------------------------------------------
# inner products


def _gauss_nodes(nodes: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = np.polynomial.hermite_e.hermegauss(nodes)
    return x, w / math.sqrt(2.0 * math.pi)


def _check_finite(values: np.ndarray, where: str) -> None:
    bad = ~np.isfinite(values)
    if np.any(bad):
        idx = np.flatnonzero(bad.ravel())[:5]
        raise NumericalError(f"non-finite integrand values in {where} at node indices {idx.tolist()}")


def gauss_hermite_inner(h: RealFn, k: int, nodes: int) -> float:
    """H(h, k) by Gauss-Hermite quadrature against the standard Gaussian.

    Exact for polynomial ``h`` when ``nodes >= (deg h + k) / 2 + 1``.
    """
    return float(gauss_hermite_coeffs(h, k, nodes)[k])


def gauss_hermite_coeffs(h: RealFn, p_max: int, nodes: int) -> np.ndarray:
    if nodes < 1:
        raise ValueError("need at least one quadrature node")
    x, w = _gauss_nodes(nodes)
    hx = np.asarray(h(x), dtype=float) * np.ones_like(x)
    _check_finite(hx, "gauss_hermite_inner")
    return he_table(p_max, x) @ (w * hx)


def mc_coeffs(
    h: RealFn, p_max: int, samples: int, rng: np.random.Generator, block: int = 1_000_000
) -> HermiteExpansion:
    """Sample-mean estimates of H(h, 0..p_max) with standard errors.

    Samples are drawn in blocks from ``rng``; sums are accumulated in block
    order so the result only depends on the generator state.
    """
    if samples < 2:
        raise ValueError("need at least two Monte-Carlo samples")
    s1 = np.zeros(p_max + 1)
    s2 = np.zeros(p_max + 1)
    done = 0
    while done < samples:
        n = min(block, samples - done)
        z = rng.standard_normal(n)
        hz = np.asarray(h(z), dtype=float) * np.ones_like(z)
        _check_finite(hz, "mc_inner")
        terms = he_table(p_max, z) * hz
        s1 += terms.sum(axis=1)
        s2 += np.einsum("ij,ij->i", terms, terms)
        done += n
    mean = s1 / samples
    var = np.maximum(s2 / samples - mean**2, 0.0) * samples / (samples - 1)
    return HermiteExpansion(mean, np.sqrt(var / samples))


def mc_inner(h: RealFn, k: int, samples: int, rng: np.random.Generator) -> tuple[float, float]:
    """(estimate, std_error) of E[h(z) He_k(z)]."""
    est = mc_coeffs(h, k, samples, rng)
    return float(est.coeffs[k]), float(est.estimator_error[k])


def link_coeffs(g: LinkFunction, p_max: int | None = None) -> np.ndarray:
    """Raw coefficients H(g, k) by exact quadrature."""
    p_max = g.degree if p_max is None else p_max
    nodes = (g.degree + p_max) // 2 + 1
    return gauss_hermite_coeffs(g, p_max, nodes)


def information_exponent(g: LinkFunction, tol: float = QUAD_TOL) -> int:
    """Smallest i >= 1 with |H(g, i)| > tol."""
    raw = link_coeffs(g)
    for i in range(1, len(raw)):
        if abs(raw[i]) > tol:
            return i
    raise ValueError("link function has no nonzero Hermite mode of order >= 1")


def generative_exponent(g: LinkFunction, tol: float = QUAD_TOL) -> int:
    """2 for even polynomial links, 1 otherwise."""
    raw = link_coeffs(g)
    return 2 if np.all(np.abs(raw[1::2]) <= tol) else 1


# --------------------------------------------------------------------------
# gating-transformed labels


def gated_label(g: LinkFunction, gc: GatingConstants) -> RealFn:
    """z -> g(z) * sigmoid(g(z)/rho + b), the noiseless gate-weighted label."""

    def h(z):
        gz = g(z)
        return gz * sigmoid(gz / gc.rho + gc.b)

    return h


def transformed_label(g: LinkFunction, gc: GatingConstants, truncation: float | None = None) -> RealFn:
    """A(z): the gate-weighted label averaged over the two noise signs.

    With ``truncation`` set, g/rho is replaced by 0 wherever |g/rho| exceeds it.
    """
    rho, b, tau = gc.rho, gc.b, gc.tau

    def A(z):
        gbar = g(z) / rho
        if truncation is not None:
            gbar = np.where(np.abs(gbar) <= truncation, gbar, 0.0)
        plus = (rho * gbar + tau) * sigmoid(gbar + tau / rho + b)
        minus = (rho * gbar - tau) * sigmoid(gbar - tau / rho + b)
        return 0.5 * (plus + minus)

    return A


def _level_crossings(g: LinkFunction, levels, bound: float) -> list[float]:
    """Real z in (-bound, bound) where g(z) equals one of ``levels``."""
    power = np.polynomial.hermite_e.herme2poly(g.coeffs / np.sqrt([math.factorial(k) for k in range(len(g.coeffs))]))
    out = []
    for level in levels:
        shifted = power.copy()
        shifted[0] -= level
        for root in np.polynomial.polynomial.polyroots(shifted):
            if abs(root.imag) < 1e-9 and abs(root.real) < bound:
                out.append(float(root.real))
    return sorted(set(out))


def adaptive_coeffs(h: RealFn, p_max: int, points: Sequence[float] = (), bound: float = ADAPTIVE_BOUND) -> HermiteExpansion:
    """H(h, 0..p_max) by adaptive quadrature on [-bound, bound], split at ``points``.

    The Gaussian mass beyond ``bound`` is below 1e-30, so for polynomially
    bounded ``h`` the truncation is far below the reported error.
    """
    edges = [-bound, *sorted(p for p in points if -bound < p < bound), bound]
    coeffs = np.zeros(p_max + 1)
    errs = np.zeros(p_max + 1)
    for p in range(p_max + 1):
        def f(z, p=p):
            return float(h(np.asarray(z))) * he(p, z) * math.exp(-0.5 * z * z) / SQRT_2PI

        for lo, hi in zip(edges[:-1], edges[1:]):
            val, err = scipy.integrate.quad(f, lo, hi, epsabs=1e-14, epsrel=1e-12, limit=200)
            coeffs[p] += val
            errs[p] += err
    _check_finite(coeffs, "adaptive quadrature")
    return HermiteExpansion(coeffs, errs)


def a_coeffs(
    g: LinkFunction,
    gc: GatingConstants,
    truncation: float | None = None,
    p_max: int = 2,
    estimator: str = "quadrature",
    samples: int = 10_000_000,
    rng: np.random.Generator | None = None,
) -> HermiteExpansion:
    """Raw Hermite coefficients a_0..a_{p_max} of the transformed label A.

    ``estimator="quadrature"`` integrates adaptively, splitting where a gate
    argument crosses zero or the truncation switches; ``estimator="mc"`` draws
    ``samples`` Gaussians from ``rng``.
    """
    if p_max < 2:
        raise ValueError("p_max must be at least 2")
    A = transformed_label(g, gc, truncation)
    if estimator == "quadrature":
        levels = [-gc.rho * gc.b - gc.tau, -gc.rho * gc.b + gc.tau]
        if truncation is not None:
            levels += [gc.rho * truncation, -gc.rho * truncation]
        return adaptive_coeffs(A, p_max, _level_crossings(g, levels, ADAPTIVE_BOUND))
    if estimator == "mc":
        if rng is None:
            raise ValueError("Monte-Carlo estimator needs an rng")
        return mc_coeffs(A, p_max, samples, rng)
    raise ValueError(f"unknown estimator {estimator!r}")


# --------------------------------------------------------------------------
# sigmoid derivative bounds


def sigmoid_derivative(k: int, z):
    """Closed-form k-th derivative of the logistic sigmoid, k in 0..3."""
    s = sigmoid(np.asarray(z, dtype=float))
    if k == 0:
        return s
    d1 = s * (1.0 - s)
    if k == 1:
        return d1
    if k == 2:
        return d1 * (1.0 - 2.0 * s)
    if k == 3:
        return d1 * (1.0 - 6.0 * s + 6.0 * s * s)
    raise ValueError(f"derivative order must be in 0..3, got {k}")


@dataclass
class BoundsReport:
    k: int
    z: np.ndarray
    value: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    @property
    def holds(self) -> bool:
        return bool(np.all((self.lower <= self.value) & (self.value <= self.upper)))


def sigmoid_derivative_bounds_check(k: int, z_grid: Sequence[float]) -> BoundsReport:
    """Check e^z/2 <= sigma^(k)(z) <= 2 e^z on a grid with every z < -k - 2."""
    if k not in (0, 1, 2, 3):
        raise ValueError(f"derivative order must be in 0..3, got {k}")
    z = np.atleast_1d(np.asarray(z_grid, dtype=float))
    bad = z >= -k - 2
    if np.any(bad):
        raise ValueError(f"grid points {z[bad].tolist()} violate z < {-k - 2}")
    ez = np.exp(z)
    return BoundsReport(k, z, sigmoid_derivative(k, z), ez / 2.0, 2.0 * ez)
