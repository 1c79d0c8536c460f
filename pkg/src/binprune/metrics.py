"""Error metrics, binarization difficulty and average-bit accounting."""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy import stats

from .binarize import binary
from .errors import ConfigError, DataError
from .gram import decoupled_error
from .tensorio import sample_unit_variance


def l1_error(W, W_hat):
    W, W_hat = np.asarray(W, dtype=np.float64), np.asarray(W_hat, dtype=np.float64)
    if W.shape != W_hat.shape:
        raise DataError(f"shape mismatch: {W.shape} vs {W_hat.shape}")
    return float(np.sum((W - W_hat) ** 2))


def l2_error(W_orig, W_hat, S):
    W_orig, W_hat = np.asarray(W_orig, dtype=np.float64), np.asarray(W_hat, dtype=np.float64)
    if W_orig.shape != W_hat.shape:
        raise DataError(f"shape mismatch: {W_orig.shape} vs {W_hat.shape}")
    return decoupled_error(W_orig - W_hat, S)


def bd_score(W, keep=None):
    """Mean over rows of the population variance of ``|W_i - mean(W_i)|``.

    With ``keep``, each row's statistics use only the retained entries.
    """
    W = np.asarray(W, dtype=np.float64)
    if W.ndim != 2 or W.shape[0] < 1 or W.shape[1] < 2:
        raise DataError(f"bd_score needs an n x m matrix with m >= 2, got {W.shape}")
    if keep is None:
        dev = np.abs(W - W.mean(axis=1, keepdims=True))
        return float(np.mean(dev.var(axis=1)))
    keep = np.asarray(keep, dtype=bool)
    counts = keep.sum(axis=1)
    if np.any(counts < 1):
        raise DataError("every row needs at least one retained entry")
    mu = (W * keep).sum(axis=1) / counts
    dev = np.abs(W - mu[:, None])
    mean_dev = (dev * keep).sum(axis=1) / counts
    var = (((dev - mean_dev[:, None]) ** 2) * keep).sum(axis=1) / counts
    return float(np.mean(var))


def binarization_error(W):
    """``L1`` of plain row binarization."""
    return l1_error(W, binary(W).W_hat)


def bd_error_correlation(matrices):
    """Spearman rank correlation between BD score and plain-binarization L1."""
    matrices = list(matrices)
    if len(matrices) < 2:
        raise DataError("need at least two matrices to rank")
    bd = np.array([bd_score(W) for W in matrices])
    err = np.array([binarization_error(W) for W in matrices])
    if np.ptp(bd) == 0 or np.ptp(err) == 0:
        raise DataError("degenerate ensemble: constant BD or error, correlation undefined")
    return float(stats.spearmanr(bd, err).statistic)


def mixed_ensemble(count=60, seed=0, n=16, m=64, dfs=(2.5, 3.0, 5.0, 10.0)):
    """Unit-Frobenius-norm matrices cycling through gaussian, laplace and student-t rows."""
    rng = np.random.default_rng(seed)
    kinds = [("gaussian", None), ("laplace", None)] + [("student-t", df) for df in dfs]
    out = []
    for i in range(count):
        dist, df = kinds[i % len(kinds)]
        W = sample_unit_variance(rng, dist, (n, m), df if df else 3.0)
        out.append(W / np.linalg.norm(W))
    return out


@dataclass(frozen=True)
class BitBudget:
    r_salient: float
    N: int
    M: int
    b_size: int
    n_param: float
    n_storing: float


def average_bits(r_salient, N, M, b_size):
    """Weight bits per original parameter and per-weight storage overhead.

    Evaluated in exact rational arithmetic from the decimal value of ``r_salient``.
    """
    if not 0 <= r_salient < 1:
        raise ConfigError(f"r_salient must be in [0, 1), got {r_salient}")
    if not 1 <= N <= M:
        raise ConfigError(f"need 1 <= N <= M, got {N}:{M}")
    if b_size < 1:
        raise ConfigError(f"b_size must be >= 1, got {b_size}")
    r = Fraction(str(r_salient))
    n_param = (2 * r + (1 - r)) * Fraction(N, M)
    n_storing = 2 + Fraction(1, b_size)
    return BitBudget(float(r_salient), int(N), int(M), int(b_size), float(n_param), float(n_storing))
