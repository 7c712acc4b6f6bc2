import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.special import expit

from mambaicl.embedding import embed, phi
from mambaicl.hermite import GatingConstants
from mambaicl.ssm import (
    GeneralMambaParams,
    MambaParams,
    closed_form_outputs,
    context_vector,
    gating_matrix,
    gating_weights,
    mamba_scalar,
    normalized_scalar,
    query_gates,
    recurrence_forward,
)

GC = GatingConstants(rho=2.0, b=-4.0, tau=0.1)


def random_prompt(gen, d, n):
    return embed(gen.standard_normal((n, d)), gen.standard_normal(n), gen.standard_normal(d))


def random_params(gen, k, dh):
    return GeneralMambaParams(gen.standard_normal((dh, k)), gen.standard_normal((dh, k)), 0.3 * gen.standard_normal(k), -1.0)


class TestRecurrence:
    @pytest.mark.parametrize("d, n, dh", list(itertools.product([2, 4], [1, 4, 16], [2, 6])))
    def test_matches_closed_form(self, gen, d, n, dh):
        for _ in range(5):
            Z = random_prompt(gen, d, n)
            p = random_params(gen, Z.z_cols.shape[0], dh)
            np.testing.assert_allclose(recurrence_forward(Z, p), closed_form_outputs(Z, p), atol=1e-10, rtol=1e-10)

    def test_first_token(self, gen):
        Z = random_prompt(gen, 3, 2)
        p = random_params(gen, Z.z_cols.shape[0], 3)
        z = Z.z_cols[:, 0]
        s = expit(p.w @ z + p.b)
        want = s * z * (z @ p.W_B.T @ p.W_C @ z)
        np.testing.assert_allclose(recurrence_forward(Z, p)[:, 0], want, atol=1e-12)

    def test_closed_gate_gives_zero(self, gen):
        Z = random_prompt(gen, 3, 4)
        k = Z.z_cols.shape[0]
        p = GeneralMambaParams(np.eye(k), np.eye(k), np.zeros(k), -800.0)
        assert np.all(recurrence_forward(Z, p) == 0)

    def test_causal(self, gen):
        Z = random_prompt(gen, 2, 6)
        p = random_params(gen, Z.z_cols.shape[0], 4)
        before = closed_form_outputs(Z, p)
        Z.z_cols[:, 4] += 1.0
        after = closed_form_outputs(Z, p)
        np.testing.assert_array_equal(before[:, :4], after[:, :4])

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            GeneralMambaParams(np.eye(3), np.eye(4), np.zeros(3), 0.0)
        with pytest.raises(ValueError):
            GeneralMambaParams(np.eye(3), np.eye(3), np.zeros(2), 0.0)


class TestGating:
    def test_constant_arguments(self):
        s = expit(0.7)
        G = gating_matrix(np.full(5, 0.7))
        for j in range(5):
            for l in range(5):
                want = s * (1 - s) ** (l - j) if j <= l else 0.0
                assert G[j, l] == pytest.approx(want, rel=1e-13, abs=1e-300)

    @given(st.lists(st.floats(-30, 30), min_size=1, max_size=20))
    def test_partition(self, args):
        G = gating_matrix(np.array(args))
        keep = np.cumprod(expit(-np.array(args)))
        np.testing.assert_allclose(G.sum(axis=0) + keep, 1.0, atol=1e-12)
        assert np.all(G >= 0)

    def test_query_argument_is_bias(self, gen):
        Z = random_prompt(gen, 3, 5)
        Z.z_cols[-1, -1] = 0.0
        G = gating_weights(Z, GC)
        assert G[-1, -1] == pytest.approx(expit(GC.b), rel=1e-13)

    def test_query_gates_match_matrix(self, gen):
        ys = gen.standard_normal(7) * 3
        full = gating_matrix(np.append(ys, 0.0) / GC.rho + GC.b)
        np.testing.assert_allclose(query_gates(ys, GC), full[:-1, -1], rtol=1e-12)


class TestScalar:
    def test_matches_general_model(self, gen):
        for _ in range(20):
            Z = random_prompt(gen, 3, 6)
            mp = MambaParams(gen.standard_normal(Z.d_tilde), GC)
            out = closed_form_outputs(Z, GeneralMambaParams.from_simplified(mp))
            assert mamba_scalar(Z, mp) == pytest.approx(out[-1, -1], rel=1e-12, abs=1e-12)

    def test_zero_gamma(self, gen):
        Z = random_prompt(gen, 3, 6)
        assert mamba_scalar(Z, MambaParams(np.zeros(Z.d_tilde), GC)) == 0.0

    def test_linear_in_gamma(self, gen):
        Z = random_prompt(gen, 3, 6)
        g1, g2 = gen.standard_normal((2, Z.d_tilde))
        lhs = mamba_scalar(Z, MambaParams(2 * g1 - 3 * g2, GC))
        rhs = 2 * mamba_scalar(Z, MambaParams(g1, GC)) - 3 * mamba_scalar(Z, MambaParams(g2, GC))
        assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-12)

    def test_rejects_nonfinite_gamma(self):
        with pytest.raises(ValueError):
            MambaParams(np.array([np.nan]), GC)

    def test_batched_is_normalized(self, gen):
        xs = gen.standard_normal((4, 9, 3))
        ys = gen.standard_normal((4, 9))
        qs = gen.standard_normal((4, 3))
        gamma = gen.standard_normal(10)
        got = normalized_scalar(phi(xs), ys, phi(qs), gamma, GC)
        for i in range(4):
            Z = embed(xs[i], ys[i], qs[i])
            assert got[i] == pytest.approx(mamba_scalar(Z, MambaParams(gamma, GC)) / 9, rel=1e-12)
        assert context_vector(phi(xs), ys, GC).shape == (4, 10)
