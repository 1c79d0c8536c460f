"""Pruning scores, salient-column selection and nested N:M mask groups."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError


def hessian_scores(W, H):
    """``s_ij = W_ij^2 / [H^-1]_jj^2``.  ``H`` is a DampedHessian or an inverse-diagonal vector."""
    inv_diag = np.asarray(getattr(H, "inv_diag", H), dtype=np.float64)
    W = np.asarray(W, dtype=np.float64)
    if inv_diag.shape != (W.shape[1],):
        raise DataError(f"inverse diagonal has shape {inv_diag.shape}, weight {W.shape}")
    return W**2 / inv_diag[None, :] ** 2


def magnitude_scores(W):
    return np.asarray(W, dtype=np.float64) ** 2


def wanda_scores(W, X):
    """``|w| * ||X_col||_2`` with column norms over every calibration token."""
    X = np.asarray(X, dtype=np.float64).reshape(-1, np.shape(W)[1])
    return np.abs(W) * np.linalg.norm(X, axis=0)[None, :]


def random_scores(shape, rng):
    return rng.random(shape)


@dataclass(frozen=True)
class MaskGroup:
    """Nested keep-masks; ``steps[k-1]`` keeps ``M - k`` of every ``M`` consecutive weights."""

    steps: tuple
    N: int
    M: int
    shape: tuple

    @property
    def final(self):
        if self.steps:
            return self.steps[-1]
        return np.ones(self.shape, dtype=bool)

    def pruned_at(self, k):
        """Elements removed by step ``k`` (1-based)."""
        prev = self.steps[k - 2] if k >= 2 else np.ones(self.shape, dtype=bool)
        return prev & ~self.steps[k - 1]

    def __len__(self):
        return len(self.steps)


def check_nm(N, M, m=None):
    if not (isinstance(N, (int, np.integer)) and isinstance(M, (int, np.integer))):
        raise ConfigError(f"N and M must be integers, got {N!r}, {M!r}")
    if not 1 <= N <= M:
        raise ConfigError(f"need 1 <= N <= M, got N={N}, M={M}")
    if m is not None and m % M:
        raise ConfigError(f"row length {m} is not divisible by M={M}")


def keep_ranks(scores, M):
    """Rank (0 = best) of every element inside its group of ``M``; ties go to the lower index."""
    scores = np.asarray(scores, dtype=np.float64)
    n, m = scores.shape
    grouped = scores.reshape(n, m // M, M)
    order = np.argsort(-grouped, axis=-1, kind="stable")
    return np.argsort(order, axis=-1).reshape(n, m)


def split_mask(scores, N, M):
    """Build the ``M - N`` nested keep-masks of an N:M pruning.

    ``N == M`` is accepted and yields an empty group (nothing is pruned).
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 2:
        raise DataError(f"scores must be 2-D, got shape {scores.shape}")
    check_nm(N, M, scores.shape[1])
    ranks = keep_ranks(scores, M)
    steps = tuple(ranks < M - k for k in range(1, M - N + 1))
    return MaskGroup(steps, int(N), int(M), scores.shape)


@dataclass(frozen=True)
class SalientPartition:
    salient: np.ndarray
    m: int

    @property
    def non_salient(self):
        return np.setdiff1d(np.arange(self.m), self.salient)

    @property
    def column_mask(self):
        mask = np.zeros(self.m, dtype=bool)
        mask[self.salient] = True
        return mask


def salient_count(r_salient, m):
    return int(np.floor(r_salient * m + 0.5))


def select_salient(scores, r_salient):
    """Top ``round(r_salient * m)`` columns by score column-sum."""
    if not 0 <= r_salient < 1:
        raise ConfigError(f"r_salient must be in [0, 1), got {r_salient}")
    scores = np.asarray(scores, dtype=np.float64)
    m = scores.shape[1]
    order = np.argsort(-scores.sum(axis=0), kind="stable")
    return SalientPartition(np.sort(order[: salient_count(r_salient, m)]), m)
