"""Calibration Gram matrix, damped Hessian and the decoupled layer error."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .errors import ConfigError, DataError, NumericalError

DEFAULT_DAMPING = 0.01


def x2s(X):
    """Gram matrix ``S = sum_b X_b^T X_b`` of a ``(B, L, m)`` calibration batch.

    Accumulated in float64, batch index ascending, then symmetrised exactly.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 2:
        X = X[None]
    if X.ndim != 3:
        raise DataError(f"calibration must have shape (B, L, m), got {X.shape}")
    if not np.all(np.isfinite(X)):
        raise DataError("calibration contains non-finite values")
    m = X.shape[-1]
    S = np.zeros((m, m))
    for Xb in X:
        S += Xb.T @ Xb
    return 0.5 * (S + S.T)


def decoupled_error(R, S):
    """``Tr(R S R^T)``, equal to ``sum_b ||R X_b^T||_F^2`` for ``S = x2s(X)``."""
    R = np.asarray(R, dtype=np.float64)
    S = np.asarray(S, dtype=np.float64)
    if R.ndim != 2 or S.shape != (R.shape[1], R.shape[1]):
        raise DataError(f"shape mismatch: R {R.shape}, S {S.shape}")
    return float(np.sum((R @ S) * R))


def direct_error(R, X):
    """Reference form ``sum_b ||X_b R^T||_F^2`` computed without the Gram matrix."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 2:
        X = X[None]
    return float(sum(np.sum((Xb @ R.T) ** 2) for Xb in X))


@dataclass(frozen=True)
class DampedHessian:
    H: np.ndarray
    damping: float
    chol: np.ndarray
    inverse: np.ndarray

    @property
    def inv_diag(self):
        return np.diag(self.inverse).copy()

    @property
    def m(self):
        return self.H.shape[0]


def damped_hessian(S, damping=DEFAULT_DAMPING):
    """``H = S + damping * mean(diag S) * I`` with its Cholesky factor and inverse."""
    if not damping > 0:
        raise ConfigError(f"damping ratio must be > 0, got {damping}")
    S = np.asarray(S, dtype=np.float64)
    m = S.shape[0]
    H = S + damping * float(np.mean(np.diag(S))) * np.eye(m)
    try:
        chol = linalg.cholesky(H, lower=True)
    except linalg.LinAlgError as exc:
        raise NumericalError(f"Cholesky of damped Hessian failed: {exc}") from exc
    inverse = linalg.cho_solve((chol, True), np.eye(m))
    inverse = 0.5 * (inverse + inverse.T)
    if not np.all(np.diag(inverse) > 0):
        raise NumericalError("damped Hessian inverse has non-positive diagonal")
    return DampedHessian(H, damping, chol, inverse)
