import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from binprune.binarize import (
    BinaryFactorization,
    binary,
    grouped_binarize,
    inner_error,
    refine,
    refine_groups,
    residual_binarize,
    sign,
    split_candidates,
    update_alpha,
    update_mu,
)
from binprune.gram import decoupled_error
from binprune.metrics import l1_error

from conftest import gram_from, heavy


def row_objective(S, W, mu, alpha, B):
    R = W - mu[:, None] - alpha[:, None] * B
    return np.einsum("ij,jk,ik->i", R, S, R)


def stationarity(f, x, i, h=1e-4):
    """Central-difference gradient along coordinate ``i``, relative to the curvature scale."""
    e = np.zeros_like(x)
    e[i] = h
    fp, f0, fm = f(x + e)[i], f(x)[i], f(x - e)[i]
    g = (fp - fm) / (2 * h)
    a = (fp - 2 * f0 + fm) / (2 * h * h)
    return abs(g) / (2 * a * max(1.0, abs(x[i])))


class TestBinary:
    def test_hand_oracle(self):
        fit = binary(np.array([[3.0, 1.0, -2.0]]))
        assert fit.mu[0] == pytest.approx(2 / 3)
        assert fit.alpha[0] == pytest.approx(16 / 9)
        np.testing.assert_array_equal(fit.B, [[1, 1, -1]])
        np.testing.assert_allclose(fit.W_hat, [[22 / 9, 22 / 9, -10 / 9]])
        assert l1_error([[3.0, 1.0, -2.0]], fit.W_hat) == pytest.approx(258 / 81)

    def test_sign_of_zero(self):
        np.testing.assert_array_equal(sign([0.0, -0.0, -1e-300]), [1, 1, -1])
        fit = binary(np.array([[1.0, 1.0]]))
        np.testing.assert_array_equal(fit.B, [[1, 1]])
        assert fit.alpha[0] == 0

    @settings(max_examples=100, deadline=None)
    @given(st.integers(1, 4), st.integers(0, 2**31))
    def test_no_sign_pattern_beats_it(self, m, seed):
        W = np.random.default_rng(seed).standard_normal((1, m)) * 3
        fit = binary(W)
        Wt = W[0] - fit.mu[0]
        best = fit_err = np.sum((Wt - fit.alpha[0] * fit.B[0]) ** 2)
        for pattern in itertools.product([-1.0, 1.0], repeat=m):
            b = np.array(pattern)
            a = b @ Wt / m
            best = min(best, np.sum((Wt - a * b) ** 2))
        assert fit_err <= best + 1e-10


class TestResidual:
    def test_oracle(self):
        Wt = np.array([[2.0, -1.0, 0.5, -3.5]])
        rf = residual_binarize(Wt)
        assert rf.alpha1[0] == pytest.approx(7 / 4)
        resid = Wt - 7 / 4 * sign(Wt)
        np.testing.assert_array_equal(rf.B2, sign(resid))
        assert rf.alpha2[0] == pytest.approx(np.abs(resid).mean())
        assert l1_error(Wt, rf.reconstruct()) < l1_error(Wt, rf.alpha1[:, None] * rf.B1)

    def test_masked_fit_ignores_dropped_entries(self):
        Wt = np.array([[1.0, -2.0, 100.0]])
        rf = residual_binarize(Wt, np.array([[True, True, False]]))
        assert rf.alpha1[0] == pytest.approx(1.5)
        assert rf.B1[0, 2] == 0 and rf.B2[0, 2] == 0


class TestGrouped:
    def brute(self, Wt, k, grid):
        mag = np.abs(Wt)
        best = None
        for combo in itertools.combinations(split_candidates(mag, grid), k):
            seg = np.searchsorted(np.array(combo), mag, side="right")
            err = 0.0
            for i in range(Wt.shape[0]):
                for s in range(k + 1):
                    v = mag[i, seg[i] == s]
                    if v.size:
                        err += np.sum((v - v.mean()) ** 2)
            if best is None or err < best[0] - 0:
                best = (err, combo) if best is None or err < best[0] else best
        return best

    @pytest.mark.parametrize("k", [1, 2])
    def test_matches_brute_force(self, rng, k):
        Wt = heavy(rng, (3, 16))
        grid = (10, 30, 50, 70, 90)
        plan = grouped_binarize(Wt, k, grid)
        err, combo = self.brute(Wt, k, grid)
        assert plan.error == pytest.approx(err, rel=1e-12)
        np.testing.assert_array_equal(plan.thresholds, combo)
        assert l1_error(Wt, plan.reconstruct()) == pytest.approx(err, rel=1e-9)

    def test_more_splits_never_hurt(self, rng):
        for _ in range(20):
            Wt = heavy(rng, (4, 32))
            errs = [grouped_binarize(Wt, k).error for k in (0, 1, 2, 3)]
            assert all(b <= a + 1e-12 for a, b in zip(errs, errs[1:]))

    def test_zero_splits_is_plain_binarization(self, rng):
        W = rng.standard_normal((3, 8))
        fit = binary(W)
        plan = grouped_binarize(W - fit.mu[:, None], 0)
        np.testing.assert_allclose(plan.reconstruct() + fit.mu[:, None], fit.W_hat)

    def test_duplicate_percentiles_collapse(self):
        plan = grouped_binarize(np.ones((2, 8)), 2)
        assert plan.n_segments == 2
        assert plan.error == 0

    def test_mask(self, rng):
        Wt = rng.standard_normal((2, 8))
        mask = np.zeros((2, 8), dtype=bool)
        mask[:, :4] = True
        plan = grouped_binarize(Wt, 1, mask=mask)
        assert np.all(plan.B[~mask] == 0)
        assert np.all(plan.reconstruct()[~mask] == 0)


class TestClosedForm:
    def test_stationary_points(self, rng):
        for _ in range(30):
            n, m = rng.integers(1, 9, size=2)
            _, S = gram_from(rng, m)
            W = heavy(rng, (n, m))
            B = sign(rng.standard_normal((n, m)))
            alpha0 = rng.random(n)
            mu = update_mu(S, W, B, alpha0)
            alpha = update_alpha(S, W, mu, B)
            for i in range(n):
                assert stationarity(lambda x: row_objective(S, W, x, alpha0, B), mu, i) < 1e-6
                assert stationarity(lambda x: row_objective(S, W, mu, x, B), alpha, i) < 1e-6

    def test_identity_gram_reduces_to_means(self, rng):
        W = rng.standard_normal((3, 6))
        fit = binary(W)
        S = np.eye(6)
        np.testing.assert_allclose(update_mu(S, W, fit.B, fit.alpha), fit.mu + fit.alpha * fit.B.mean(axis=1))
        np.testing.assert_allclose(update_alpha(S, W, fit.mu, fit.B), fit.alpha)

    def test_all_zero_signs_keep_alpha_finite(self):
        a = update_alpha(np.eye(3), np.ones((1, 3)), np.zeros(1), np.zeros((1, 3)))
        np.testing.assert_array_equal(a, [0.0])

    def test_refine_never_increases(self, rng):
        for _ in range(20):
            _, S = gram_from(rng, 8)
            W = heavy(rng, (4, 8))
            fit = binary(W)
            hist = []
            mu, alpha = refine(S, W, fit.B, fit.mu, fit.alpha, T=5, history=hist)
            start = decoupled_error(W - fit.W_hat, S)
            seq = [start] + hist
            assert all(b <= a * (1 + 1e-9) + 1e-12 for a, b in zip(seq, seq[1:]))
            assert len(hist) == 10

    def test_refine_groups_with_fixed_term(self, rng):
        _, S = gram_from(rng, 6)
        W = rng.standard_normal((2, 6))
        Bs = [sign(W) * (np.arange(6) < 3), sign(W) * (np.arange(6) >= 3)]
        fixed = 0.1 * sign(rng.standard_normal((2, 6)))
        hist = []
        mu, alphas = refine_groups(S, W, Bs, np.zeros(2), [np.ones(2), np.ones(2)], 3, fixed=fixed, history=hist)
        assert hist[-1] == pytest.approx(inner_error(S, W, mu, alphas, Bs, fixed))
        assert len(hist) == 3 * 3


class TestFactorization:
    def test_reconstruct_zeroes_pruned(self, rng):
        fact = BinaryFactorization.from_binary(binary(rng.standard_normal((2, 4))))
        fact.keep = np.array([[1, 0, 1, 0], [0, 1, 1, 1]], dtype=bool)
        out = fact.reconstruct()
        assert np.all(out[~fact.keep] == 0)
        np.testing.assert_allclose(out[fact.keep], fact.model()[fact.keep])
