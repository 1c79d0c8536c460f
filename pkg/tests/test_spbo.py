import numpy as np
import pytest

from binprune.binarize import BinaryFactorization, binary
from binprune.errors import ConfigError, DataError
from binprune.gram import damped_hessian, decoupled_error
from binprune.maskgen import MaskGroup, hessian_scores, split_mask
from binprune.spbo import (
    SpboConfig,
    oneshot_prune_binarize,
    spbo,
    spbo_factored,
    survivor_binary,
    total_error,
)

from conftest import gram_from, heavy


def instance(rng, n=8, m=16, N=4, M=8):
    _, S = gram_from(rng, m)
    W = heavy(rng, (n, m))
    group = split_mask(hessian_scores(W, damped_hessian(S)), N, M)
    return W, S, group


class TestSpbo:
    def test_trace_shape_and_final_mask(self, rng):
        W, S, group = instance(rng)
        W_hat, fact, trace = spbo(W, group, S)
        assert [r.step for r in trace.records] == list(range(5))
        assert [r.kept_fraction for r in trace.records] == [1.0, 7 / 8, 6 / 8, 5 / 8, 4 / 8]
        np.testing.assert_array_equal(fact.keep, group.final)
        assert np.all(W_hat[~group.final] == 0)
        assert trace.l2[-1] == pytest.approx(total_error(W, W_hat, S))

    def test_half_steps_monotone(self, rng):
        for _ in range(20):
            W, S, group = instance(rng)
            _, _, trace = spbo(W, group, S, SpboConfig(T=4))
            for hist in trace.half_steps:
                assert len(hist) == 4 * 2
                assert all(b <= a * (1 + 1e-9) for a, b in zip(hist, hist[1:]))

    def test_dense_ratio_refines_plain_binarization(self, rng):
        W, S, _ = instance(rng)
        group = split_mask(np.ones_like(W), 8, 8)
        W_hat, _, trace = spbo(W, group, S)
        assert len(trace.records) == 1
        assert trace.l2[0] <= decoupled_error(W - binary(W).W_hat, S)

    def test_hand_example(self):
        W, S = np.array([[4.0, 3.0, -2.0, 1.0]]), np.eye(4)
        group = split_mask(hessian_scores(W, damped_hessian(S)), 2, 4)
        np.testing.assert_array_equal(group.final, [[True, True, False, False]])
        W_hat, _, trace = spbo(W, group, S)
        # both survivors share a sign, so the best masked fit is their mean
        np.testing.assert_allclose(W_hat, [[3.5, 3.5, 0.0, 0.0]])
        assert trace.l2[-1] == pytest.approx(0.25 + 0.25 + 4 + 1)

    def test_trace_csv(self, rng):
        W, S, group = instance(rng, N=6)
        csv = spbo(W, group, S)[2].to_csv().splitlines()
        assert csv[0] == "step,kept_fraction,l2"
        assert len(csv) == 4 and csv[1].startswith("0,1.000000,")

    def test_no_presolve_with_empty_group(self, rng):
        W, S, _ = instance(rng)
        fact = BinaryFactorization.from_binary(binary(W))
        with pytest.raises(DataError):
            spbo_factored(W, fact, MaskGroup((), 8, 8, W.shape), S, presolve=False)

    def test_shape_checks(self, rng):
        W, S, group = instance(rng)
        with pytest.raises(DataError):
            spbo(W, group, S[:8, :8])
        with pytest.raises(DataError):
            spbo(W[:, :8], group, S[:8, :8])

    def test_resign_keeps_support(self, rng):
        W, S, group = instance(rng)
        fact = BinaryFactorization.from_binary(binary(W))
        _, out, _ = spbo_factored(W, fact, group, S, resign=True)
        assert np.all((out.B != 0) == group.final)

    def test_config_validation(self):
        with pytest.raises(ConfigError):
            SpboConfig(T=0)
        with pytest.raises(ConfigError):
            SpboConfig(eps=0.0)


class TestOneShot:
    def test_survivor_fit(self):
        W = np.array([[4.0, 0.0, 2.0, 100.0]])
        keep = np.array([[True, True, True, False]])
        fact = survivor_binary(W, keep)
        assert fact.mu[0] == pytest.approx(2.0)
        assert fact.alpha[0] == pytest.approx(4 / 3)
        np.testing.assert_allclose(fact.reconstruct(), [[10 / 3, 2 / 3, 10 / 3, 0.0]])

    def test_full_mask_matches_spbo(self, rng):
        W, S, _ = instance(rng)
        full = np.ones_like(W, dtype=bool)
        W_hat, l2 = oneshot_prune_binarize(W, full, S)
        W_ref, _, trace = spbo(W, split_mask(np.ones_like(W), 8, 8), S)
        np.testing.assert_allclose(W_hat, W_ref, rtol=1e-12)
        assert l2 == pytest.approx(trace.l2[-1], rel=1e-12)

    def test_zero_matrix(self):
        W, S = np.zeros((2, 8)), np.eye(8)
        keep = split_mask(np.ones((2, 8)), 4, 8)
        assert oneshot_prune_binarize(W, keep.final, S)[1] == 0.0
        assert spbo(W, keep, S)[2].l2[-1] == 0.0

    def test_shift_on_pruned_positions_can_hurt(self):
        # the inner objective carries mu on pruned positions too
        W, S = np.array([[4.0, 3.0, -2.0, 1.0]]), np.eye(4)
        keep = np.array([[True, True, False, False]])
        assert oneshot_prune_binarize(W, keep, S, T=0)[1] == pytest.approx(5.0)
        W_hat, l2 = oneshot_prune_binarize(W, keep, S)
        np.testing.assert_allclose(W_hat, [[2.25, 1.25, 0.0, 0.0]])
        assert l2 == pytest.approx(1.75**2 * 2 + 4 + 1)

    def test_mask_shape(self, rng):
        W, S, _ = instance(rng)
        with pytest.raises(DataError):
            oneshot_prune_binarize(W, np.ones((2, 2), dtype=bool), S)
