"""Block-wise propagation of quantization error into not-yet-processed columns."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .errors import ConfigError, NumericalError

DEFAULT_BLOCK = 8


@dataclass
class CompensationState:
    """Working copy of a weight matrix processed left to right in column blocks.

    Columns before ``position`` are final.
    """

    W: np.ndarray
    H: np.ndarray
    b_size: int = DEFAULT_BLOCK
    position: int = 0

    def __post_init__(self):
        if self.b_size < 1:
            raise ConfigError(f"block size must be >= 1, got {self.b_size}")
        self.W = np.array(self.W, dtype=np.float64)

    def blocks(self):
        m = self.W.shape[1]
        for c0 in range(0, m, self.b_size):
            yield c0, min(c0 + self.b_size, m)

    def current(self):
        return self.W[:, self.position : self.position + self.b_size]


def compensate_block(state, E, H=None):
    """Fold the error ``E = W_block - W_hat_block`` of the current block into later columns.

    The update ``W_rest += E H_block,rest H_rest,rest^-1`` is the least-squares
    optimal correction of the remaining columns for the output error
    ``(dW) H (dW)^T``; with one column it reduces to ``-e * Hinv_01 / Hinv_00``.
    Advances ``state.position`` past the block.
    """
    H = state.H if H is None else H
    E = np.asarray(E, dtype=np.float64)
    c0 = state.position
    c1 = c0 + E.shape[1]
    if c1 < state.W.shape[1] and np.any(E):
        H_rr = H[c1:, c1:]
        H_rb = H[c1:, c0:c1]
        try:
            coupling = linalg.cho_solve(linalg.cho_factor(H_rr, lower=True), H_rb)
        except linalg.LinAlgError as exc:
            raise NumericalError(f"Hessian solve failed in compensation: {exc}") from exc
        state.W[:, c1:] += E @ coupling.T
    state.position = c1
    return state
