import warnings

import numpy as np
import pytest

from mambaicl.analysis import (
    IllConditionedWarning,
    KernelRidgeModel,
    b_coeffs,
    cosine,
    dominant_degree,
    expected_psi_product,
    exponent_reduction_report,
    feature_learning_fit,
    fit_feature_model,
    gamma_alignment,
    indicator_quadratic,
    kernel_ridge_batch,
    kernel_ridge_predict,
    predict_gamma_star,
)
from mambaicl.embedding import d_tilde
from mambaicl.errors import NumericalError
from mambaicl.hermite import GatingConstants, LinkFunction, link_coeffs
from mambaicl.pretraining import StageData, init_params, TrainConfig
from mambaicl.tasks import FeatureSpace, RngStream, sample_task

DESK = GatingConstants(rho=2.0, b=-4.0, tau=0.1)
HE3 = LinkFunction.preset("he3")
A_HE3 = np.array([0.019507280978319, 0.0474595020242932, 0.155933642087955])
# B(z) for He3 at gamma0 = 0.5 with the a above; mpmath piecewise quadrature between the
# indicator roots -1.7247 and 0.50728.
B_HE3 = np.array([-0.17902919341082, 0.207514754736208, 0.00301969578165915])


class TestFeatureFit:
    def test_exact_quadratic(self, gen):
        t = gen.standard_normal(200)
        rep = fit_feature_model(0.3 + 0.5 * t**2, t, 2)
        np.testing.assert_allclose(rep.coeffs, (0.3, 0.5), atol=1e-12)
        assert rep.r_squared == pytest.approx(1.0)

    def test_noise_has_no_signal(self, gen):
        rep = fit_feature_model(gen.standard_normal(20000), gen.standard_normal(20000), 1)
        assert abs(rep.r_squared) < 1e-3

    def test_singular_design(self):
        with pytest.raises(NumericalError):
            fit_feature_model(np.arange(5.0), np.ones(5), 1)

    def test_degree_guard(self):
        with pytest.raises(ValueError):
            fit_feature_model(np.arange(5.0), np.arange(5.0), 3)

    def test_from_stage_table(self, gen):
        T, d, r = 50, 3, 2
        betas, qs = gen.standard_normal((T, d)), gen.standard_normal((T, d))
        t = np.einsum("td,td->t", betas, qs) / r
        # one-slot table whose scalar is exactly 1 + 2 t
        data = StageData(np.ones((T, 1)), (1 + 2 * t)[:, None], np.zeros(T), betas, qs)
        rep = feature_learning_fit(np.array([1.0]), data, r, 1)
        np.testing.assert_allclose(rep.coeffs, (1.0, 2.0), atol=1e-12)


class TestAlignment:
    def test_all_mass_on_features(self):
        space = FeatureSpace(3, 1, (0,))
        gamma = np.zeros(d_tilde(3))
        gamma[1] = 1.0
        rep = gamma_alignment(gamma, space)
        assert rep.mass_on_feature_slots == 1.0
        assert rep.uniform_share == pytest.approx(2 / 9)
        assert rep.ratio == pytest.approx(4.5)

    def test_cross_slots_need_both_coordinates(self):
        space = FeatureSpace(3, 2, (0, 1))
        gamma = np.zeros(d_tilde(3))
        gamma[7] = 1.0  # (0, 1)
        assert gamma_alignment(gamma, space).mass_on_feature_slots == 1.0
        gamma[7], gamma[8] = 0.0, 1.0  # (0, 2)
        assert gamma_alignment(gamma, space).mass_on_feature_slots == 0.0

    def test_untrained_gamma_near_one(self):
        mp, _ = init_params(TrainConfig(gamma0_scale=0.5), 6)
        assert gamma_alignment(mp.gamma, FeatureSpace(6, 2)).ratio == pytest.approx(1.14, abs=0.01)

    def test_guards(self):
        with pytest.raises(ValueError):
            gamma_alignment(np.ones(4), FeatureSpace(3, 1))
        g = np.zeros(10)
        g[0] = 1.0
        with pytest.raises(NumericalError):
            gamma_alignment(g, FeatureSpace(3, 1))


class TestBCoeffs:
    def test_indicator_always_on(self):
        b = b_coeffs(HE3, [1.0, 0.0, 0.0], 0.5, p_max=3, estimator="quadrature")
        np.testing.assert_allclose(b.coeffs, link_coeffs(HE3, 3), atol=1e-9)

    def test_indicator_always_off(self):
        b = b_coeffs(HE3, [-1.0, 0.0, 0.0], 0.5, estimator="quadrature")
        assert np.all(b.coeffs == 0)

    def test_quadratic_coefficients(self):
        np.testing.assert_allclose(indicator_quadratic([1.0, 2.0, 4.0], 0.5), [0.25 - 1.0, 2.0, 1.0])

    def test_desk_quadrature(self):
        b = b_coeffs(HE3, A_HE3, 0.5, estimator="quadrature")
        np.testing.assert_allclose(b.coeffs, B_HE3, rtol=1e-7, atol=1e-12)

    def test_desk_mc(self):
        b = b_coeffs(HE3, A_HE3, 0.5, samples=2_000_000, rng=np.random.default_rng(4))
        se = b.estimator_error
        assert abs(b[0]) > 5 * se[0] and abs(b[1]) > 5 * se[1]
        assert np.all(np.abs(b.coeffs - B_HE3) < 4 * se)

    def test_cauchy_schwarz(self, gen):
        # |H(B, p)| <= sqrt(E g^2 p!) = sqrt(p!) for a unit-norm link
        for _ in range(10):
            a = gen.standard_normal(3)
            b = b_coeffs(HE3, a, 0.5, p_max=3, estimator="quadrature")
            assert np.all(np.abs(b.coeffs) <= np.sqrt([1, 1, 2, 6]) + 1e-9)


class TestGammaPrediction:
    def test_point_sphere_exact(self):
        space = FeatureSpace(3, 1, (1,))
        a, b = np.array([1.0, 2.0, 3.0]), np.array([0.5, -1.0, 2.0])
        got = expected_psi_product(a, b, space, 50, np.random.default_rng(0))
        want = np.zeros(d_tilde(3))
        want[0], want[2], want[5] = 0.5, -2.0, 3.0  # a0b0, a1b1, a2b2/2
        np.testing.assert_allclose(got, want, atol=1e-12)

    def test_sphere_moments(self):
        space = FeatureSpace(4, 3)
        r = 3
        got = expected_psi_product(np.ones(3), np.ones(3), space, 200_000, np.random.default_rng(1))
        assert got[0] == 1.0
        np.testing.assert_allclose(got[1:4], 1 / r, atol=4e-3)
        np.testing.assert_allclose(got[5:8], 3 / (r * (r + 2)) / 2, atol=4e-3)
        # cross slots (0,1), (0,2), (1,2) sit at 9, 10, 12 for d=4
        np.testing.assert_allclose(got[[9, 10, 12]], 1 / (r * (r + 2)), atol=4e-3)
        assert got[4] == 0 and got[8] == 0 and np.all(got[[11, 13, 14]] == 0)

    def test_linear_in_eta(self):
        space = FeatureSpace(3, 2)
        p1 = predict_gamma_star(HE3, DESK, 0.5, space, 1.0, 2000, np.random.default_rng(5))
        p3 = predict_gamma_star(HE3, DESK, 0.5, space, 3.0, 2000, np.random.default_rng(5))
        np.testing.assert_allclose(p3.gamma, 3 * p1.gamma, rtol=1e-12)
        assert p1.gamma[0] == pytest.approx(2 * p1.a[0] * p1.b[0], rel=1e-12)

    def test_cosine(self):
        assert cosine(np.array([1.0, 0]), np.array([2.0, 0])) == 1.0
        with pytest.raises(NumericalError):
            cosine(np.zeros(2), np.ones(2))

    def test_dominant_degree(self):
        assert dominant_degree(np.array([9.0, 1, 1, 0.1, 0.1, 0.1]), 2) == 1
        assert dominant_degree(np.array([0.0, 0.1, 0.1, 1, 1, 1]), 2) == 2


class TestExponentReduction:
    def test_he1_is_first_order(self):
        rep = exponent_reduction_report(LinkFunction.preset("he1"), DESK, 200_000, np.random.default_rng(0))
        assert rep.first_significant == 1 and rep.agrees and rep.conclusive


class TestKernelRidge:
    def test_single_point(self):
        assert kernel_ridge_predict(np.array([[0.3, 0.2]]), [4.0], np.array([0.3, 0.2])) == pytest.approx(2.0)

    def test_interpolates_without_ridge(self, gen):
        xs, ys = gen.standard_normal((5, 2)), gen.standard_normal(5)
        assert kernel_ridge_predict(xs, ys, xs[2], ridge=0.0) == pytest.approx(ys[2], abs=1e-8)

    def test_two_point_hand_solve(self):
        xs = np.array([[0.0], [1.0]])
        k = np.exp(-0.5)
        K = np.array([[2.0, k], [k, 2.0]])
        alpha = np.linalg.solve(K, [1.0, -1.0])
        q = 0.25
        want = alpha @ np.exp(-(np.array([0.0, 1.0]) - q) ** 2 / 2)
        assert kernel_ridge_predict(xs, [1.0, -1.0], np.array([q])) == pytest.approx(want, abs=1e-10)

    def test_continuity(self, gen):
        xs, ys = gen.standard_normal((6, 3)), gen.standard_normal(6)
        q = gen.standard_normal(3)
        assert abs(kernel_ridge_predict(xs, ys, q) - kernel_ridge_predict(xs, ys, q + 1e-9)) < 1e-8

    def test_coordinate_subset(self, gen):
        xs, ys, q = gen.standard_normal((6, 4)), gen.standard_normal(6), gen.standard_normal(4)
        assert kernel_ridge_predict(xs, ys, q, coords=(0, 2)) == pytest.approx(kernel_ridge_predict(xs[:, [0, 2]], ys, q[[0, 2]]))

    def test_duplicate_points_warn(self):
        xs = np.zeros((3, 2))
        with warnings.catch_warnings():
            warnings.simplefilter("error", IllConditionedWarning)
            with pytest.raises((IllConditionedWarning, NumericalError)):
                kernel_ridge_predict(xs, [1.0, 2.0, 3.0], np.zeros(2), ridge=0.0)

    def test_model_matches_single(self):
        batch = sample_task(FeatureSpace(4, 2), HE3, 0.1, 5, 3, RngStream(0))
        model = KernelRidgeModel(coords=(0, 1))
        out = model(batch)
        p = batch.prompt(2)
        assert out[2] == pytest.approx(kernel_ridge_predict(p.xs, p.ys, p.query, coords=(0, 1)), rel=1e-12)

    def test_guards(self):
        with pytest.raises(ValueError):
            kernel_ridge_batch(np.zeros((1, 1, 1)), np.zeros((1, 1)), np.zeros((1, 1)), bandwidth=0)
        with pytest.raises(ValueError):
            kernel_ridge_batch(np.zeros((1, 1, 1)), np.zeros((1, 1)), np.zeros((1, 1)), ridge=-1)
