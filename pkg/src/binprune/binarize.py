"""Binarization primitives and the closed-form shift/scale refinement.

A binarized row is ``w_hat = mu + sum_g alpha_g * B_g`` where every ``B_g`` is
a {-1, 0, +1} matrix.  The groups have disjoint support, except for the
fixed second-order residual term used on salient columns.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations
from typing import NamedTuple

import numpy as np

from .gram import decoupled_error

EPS = 1e-12
DEFAULT_ROUNDS = 3
SPLIT_GRID = tuple(range(5, 100, 5))


def sign(x):
    """Elementwise sign with ``sign(0) = +1``."""
    return np.where(np.asarray(x) >= 0, 1.0, -1.0)


class BinaryFit(NamedTuple):
    W_hat: np.ndarray
    alpha: np.ndarray
    B: np.ndarray
    mu: np.ndarray


def binary(W):
    """Row-wise mean-centred binarization; the optimal (alpha, B) for a fixed shift."""
    W = np.asarray(W, dtype=np.float64)
    mu = W.mean(axis=1)
    W_tilde = W - mu[:, None]
    alpha = np.abs(W_tilde).mean(axis=1)
    B = sign(W_tilde)
    return BinaryFit(alpha[:, None] * B + mu[:, None], alpha, B, mu)


class ResidualFit(NamedTuple):
    alpha1: np.ndarray
    B1: np.ndarray
    alpha2: np.ndarray
    B2: np.ndarray

    def reconstruct(self):
        return self.alpha1[:, None] * self.B1 + self.alpha2[:, None] * self.B2


def _masked_mean(x, mask):
    if mask is None:
        return x.mean(axis=1)
    counts = mask.sum(axis=1)
    return np.divide((x * mask).sum(axis=1), counts, out=np.zeros(x.shape[0]), where=counts > 0)


def residual_binarize(W_tilde, mask=None):
    """Two-term sign expansion of an already centred block.

    With ``mask``, scales are fitted on the masked-in entries only and the
    sign planes are zero elsewhere.
    """
    W_tilde = np.asarray(W_tilde, dtype=np.float64)
    B1 = sign(W_tilde)
    alpha1 = _masked_mean(np.abs(W_tilde), mask)
    resid = W_tilde - alpha1[:, None] * B1
    B2 = sign(resid)
    alpha2 = _masked_mean(np.abs(resid), mask)
    if mask is not None:
        B1, B2 = B1 * mask, B2 * mask
    return ResidualFit(alpha1, B1, alpha2, B2)


@dataclass(frozen=True)
class SplitPointPlan:
    """Magnitude thresholds splitting a centred block into segments.

    ``segments[i, j]`` is the index of the segment element ``(i, j)`` belongs
    to; ``alphas[i, s]`` is the row scale used in segment ``s``.
    """

    thresholds: np.ndarray
    segments: np.ndarray
    alphas: np.ndarray
    B: np.ndarray
    error: float

    @property
    def n_segments(self):
        return len(self.thresholds) + 1

    def reconstruct(self):
        if self.segments.size == 0:
            return np.zeros(self.segments.shape)
        return np.take_along_axis(self.alphas, self.segments, axis=1) * self.B


def _segment_error(mag, segments, n_segments, weight=None):
    """Per-segment least-squares fit of |w| by a row constant: total squared error and scales."""
    n = mag.shape[0]
    if weight is None:
        weight = np.ones(mag.shape)
    sums = np.zeros((n, n_segments))
    sq = np.zeros((n, n_segments))
    counts = np.zeros((n, n_segments))
    rows = np.broadcast_to(np.arange(n)[:, None], mag.shape)
    np.add.at(sums, (rows, segments), mag * weight)
    np.add.at(sq, (rows, segments), mag**2 * weight)
    np.add.at(counts, (rows, segments), weight)
    alphas = np.divide(sums, counts, out=np.zeros_like(sums), where=counts > 0)
    err = float(np.sum(sq - alphas * sums))
    return err, alphas


def split_candidates(mag, grid=SPLIT_GRID):
    """Distinct percentile values of ``mag`` used as split-point candidates."""
    if mag.size == 0:
        return np.zeros(0)
    return np.unique(np.percentile(mag, grid))


def grouped_binarize(W_tilde, n_splits=2, grid=SPLIT_GRID, mask=None):
    """Exhaustive split-point search over a percentile grid of ``|W_tilde|``.

    Each segment is binarized row-wise with its own scale.  Candidate tuples
    are visited in lexicographic order and only a strict improvement replaces
    the incumbent, so ties resolve to the smallest thresholds.  Entries outside
    ``mask`` take no part in the fit and get a zero sign.
    """
    W_tilde = np.asarray(W_tilde, dtype=np.float64)
    B = sign(W_tilde)
    mag = np.abs(W_tilde)
    weight = None
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        B = B * mask
        weight = mask.astype(np.float64)
    if W_tilde.size == 0 or (mask is not None and not mask.any()):
        return SplitPointPlan(np.zeros(0), np.zeros(W_tilde.shape, dtype=np.int64),
                              np.zeros((W_tilde.shape[0], 1)), B, 0.0)
    candidates = split_candidates(mag if mask is None else mag[mask], grid)
    k = min(n_splits, len(candidates))
    best = None
    for combo in combinations(candidates, k):
        thresholds = np.asarray(combo)
        segments = np.searchsorted(thresholds, mag, side="right")
        err, alphas = _segment_error(mag, segments, k + 1, weight)
        if best is None or err < best.error:
            best = SplitPointPlan(thresholds, segments, alphas, B, err)
    return best


# --------------------------------------------------------------------------
# closed-form refinement against a Gram matrix


def update_mu(S, W, B, alpha, eps=EPS):
    """Row shifts minimising ``Tr(R S R^T)``, ``R = W - mu - alpha*B``, for fixed (alpha, B)."""
    target = np.asarray(W) - np.asarray(alpha)[:, None] * B
    return _shift_for(S, target, eps)


def _shift_for(S, target, eps=EPS):
    s1 = S.sum(axis=1)
    return (target @ s1) / (s1.sum() + eps)


def update_alpha(S, W, mu, B, eps=EPS):
    """Row scales minimising ``Tr(R S R^T)`` for fixed (mu, B); unconstrained in sign."""
    W_tilde = np.asarray(W) - np.asarray(mu)[:, None]
    BS = B @ S
    num = np.sum(BS * W_tilde, axis=1)
    den = np.sum(BS * B, axis=1) + eps
    return num / den


def inner_error(S, W, mu, alphas, Bs, fixed=None):
    """Decoupled error of the model ``mu + sum alpha_g B_g (+ fixed)`` against ``W``."""
    R = W - mu[:, None] - sum(a[:, None] * b for a, b in zip(alphas, Bs))
    if fixed is not None:
        R = R - fixed
    return decoupled_error(R, S)


def refine_groups(S, W, Bs, mu, alphas, T=DEFAULT_ROUNDS, eps=EPS, fixed=None, history=None):
    """T rounds of exact coordinate updates: the shift, then each group scale in turn.

    ``fixed`` is a constant term of the model that is never rescaled.  If a
    ``history`` list is given, the error after every half-step is appended.
    """
    mu = np.array(mu, dtype=np.float64)
    alphas = [np.array(a, dtype=np.float64) for a in alphas]
    base = W if fixed is None else W - fixed
    for _ in range(T):
        model = sum(a[:, None] * b for a, b in zip(alphas, Bs))
        mu = _shift_for(S, base - model, eps)
        if history is not None:
            history.append(inner_error(S, base, mu, alphas, Bs))
        for g, Bg in enumerate(Bs):
            others = sum(a[:, None] * b for h, (a, b) in enumerate(zip(alphas, Bs)) if h != g)
            alphas[g] = update_alpha(S, base - others, mu, Bg, eps)
            if history is not None:
                history.append(inner_error(S, base, mu, alphas, Bs))
    return mu, alphas


def refine(S, W, B, mu0, alpha0, T=DEFAULT_ROUNDS, eps=EPS, history=None):
    """Alternate ``update_mu`` and ``update_alpha`` for ``T`` rounds."""
    mu, (alpha,) = refine_groups(S, W, [B], mu0, [alpha0], T, eps, history=history)
    return mu, alpha


# --------------------------------------------------------------------------
# factorization container


@dataclass
class BinaryFactorization:
    """``W_hat = (mu + sum_g alpha_g B_g + residual) * keep``.

    ``kind`` is ``standard``, ``residual`` or ``grouped`` (or a ``+``-joined
    combination for mixed blocks).
    """

    mu: np.ndarray
    alphas: list
    Bs: list
    keep: np.ndarray
    residual: np.ndarray | None = None
    kind: str = "standard"
    extra: dict = field(default_factory=dict)

    @classmethod
    def from_binary(cls, fit):
        return cls(fit.mu.copy(), [fit.alpha.copy()], [fit.B.copy()], np.ones(fit.B.shape, dtype=bool))

    @property
    def B(self):
        return self.Bs[0]

    @property
    def alpha(self):
        return self.alphas[0]

    def model(self):
        out = self.mu[:, None] + sum(a[:, None] * b for a, b in zip(self.alphas, self.Bs))
        if self.residual is not None:
            out = out + self.residual
        return out

    def reconstruct(self):
        return np.where(self.keep, self.model(), 0.0)
