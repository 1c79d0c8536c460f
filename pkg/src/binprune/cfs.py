"""Coarse-stage search: layer redundancy scores and per-layer N allocation."""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import ConfigError, DataError


def lr_score(I, O):
    """Cosine similarity of a layer's input and output.

    2-D inputs are treated as one vector per row; the mean cosine is returned.
    """
    I = np.atleast_2d(np.asarray(I, dtype=np.float64))
    O = np.atleast_2d(np.asarray(O, dtype=np.float64))
    if I.shape != O.shape:
        raise DataError(f"input {I.shape} and output {O.shape} differ; LR needs equal dimensions")
    ni = np.linalg.norm(I, axis=1)
    no = np.linalg.norm(O, axis=1)
    if np.any(ni == 0) or np.any(no == 0):
        raise DataError("zero-norm activation vector")
    return float(np.mean(np.sum(I * O, axis=1) / (ni * no)))


@dataclass(frozen=True)
class LayerRedundancy:
    scores: tuple
    ranks: tuple

    @classmethod
    def from_scores(cls, scores):
        """Rank 1 goes to the lowest score; equal scores rank by layer index."""
        scores = np.asarray(scores, dtype=np.float64)
        order = np.argsort(scores, kind="stable")
        ranks = np.empty(len(scores), dtype=int)
        ranks[order] = np.arange(1, len(scores) + 1)
        return cls(tuple(float(s) for s in scores), tuple(int(r) for r in ranks))

    def __len__(self):
        return len(self.scores)


@dataclass(frozen=True)
class AllocationPlan:
    N: tuple
    N_high: int
    N_low: int
    N_target: int
    M: int


def allocate(lr, N_target, M):
    """Linear interpolation from ``N_target + 1`` (rank 1) to ``N_target - 1`` (rank L), rounded half up."""
    L = len(lr)
    if L < 1:
        raise DataError("no layers to allocate")
    N_high, N_low = N_target + 1, N_target - 1
    if N_low < 1 or N_high >= M:
        raise ConfigError(f"N_target={N_target} leaves no room for +-1 allocation under M={M}")
    if L == 1:
        return AllocationPlan((N_target,), N_high, N_low, N_target, M)
    N = tuple(
        int(math.floor(N_high - Fraction((N_high - N_low) * (k - 1), L - 1) + Fraction(1, 2)))
        for k in lr.ranks
    )
    return AllocationPlan(N, N_high, N_low, N_target, M)
