import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from binprune.errors import ConfigError, DataError, NumericalError
from binprune.gram import damped_hessian, decoupled_error, direct_error, x2s


class TestX2S:
    def test_tiny_oracle(self):
        np.testing.assert_array_equal(x2s(np.array([[[1.0, 2.0]]])), [[1.0, 2.0], [2.0, 4.0]])

    def test_sum_over_batches(self, rng):
        X = rng.standard_normal((3, 5, 4))
        expected = sum(Xb.T @ Xb for Xb in X)
        np.testing.assert_allclose(x2s(X), expected, rtol=1e-13)

    def test_exactly_symmetric_and_psd(self, rng):
        S = x2s(rng.standard_normal((2, 3, 6)))
        assert np.array_equal(S, S.T)
        assert np.linalg.eigvalsh(S).min() > -1e-10

    def test_rejects_nan(self):
        with pytest.raises(DataError):
            x2s(np.array([[[np.nan, 1.0]]]))

    def test_rejects_bad_rank(self):
        with pytest.raises(DataError):
            x2s(np.zeros((1, 1, 1, 1)))


class TestDecoupledError:
    @settings(max_examples=50, deadline=None)
    @given(st.integers(1, 6), st.integers(1, 6), st.integers(1, 3), st.integers(0, 2**31))
    def test_matches_direct(self, n, m, b, seed):
        rng = np.random.default_rng(seed)
        R = rng.standard_normal((n, m))
        X = rng.standard_normal((b, 4, m))
        direct = direct_error(R, X)
        assert decoupled_error(R, x2s(X)) == pytest.approx(direct, rel=1e-10, abs=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(DataError):
            decoupled_error(np.zeros((2, 3)), np.eye(4))


class TestDampedHessian:
    def test_damping_term(self):
        S = np.diag([1.0, 3.0])
        H = damped_hessian(S, 0.01)
        np.testing.assert_allclose(H.H, np.diag([1.02, 3.02]))
        np.testing.assert_allclose(H.inv_diag, [1 / 1.02, 1 / 3.02])

    def test_rank_deficient_becomes_definite(self, rng):
        X = rng.standard_normal((1, 2, 6))
        H = damped_hessian(x2s(X))
        np.testing.assert_allclose(H.inverse @ H.H, np.eye(6), atol=1e-8)

    def test_non_positive_damping(self):
        with pytest.raises(ConfigError):
            damped_hessian(np.eye(2), 0.0)

    def test_indefinite_fails(self):
        with pytest.raises(NumericalError):
            damped_hessian(np.array([[1.0, 0.0], [0.0, -5.0]]))
