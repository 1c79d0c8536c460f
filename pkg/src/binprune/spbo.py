"""Stepwise N:M pruning interleaved with closed-form binarization refinement."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .binarize import DEFAULT_ROUNDS, EPS, BinaryFactorization, binary, refine_groups, sign
from .errors import ConfigError, DataError
from .gram import decoupled_error
from .maskgen import MaskGroup


@dataclass(frozen=True)
class SpboConfig:
    T: int = DEFAULT_ROUNDS
    eps: float = EPS
    track_error: bool = True

    def __post_init__(self):
        if self.T < 1:
            raise ConfigError(f"T must be >= 1, got {self.T}")
        if not self.eps > 0:
            raise ConfigError(f"eps must be > 0, got {self.eps}")


@dataclass
class StepRecord:
    step: int
    kept_fraction: float
    l2: float


@dataclass
class SpboTrace:
    records: list = field(default_factory=list)
    # inner-objective error after every half-step, one list per step
    half_steps: list = field(default_factory=list)

    @property
    def l2(self):
        return [r.l2 for r in self.records]

    def to_csv(self):
        lines = ["step,kept_fraction,l2"]
        lines += [f"{r.step},{r.kept_fraction:.6f},{r.l2:.10e}" for r in self.records]
        return "\n".join(lines) + "\n"


def total_error(W_orig, W_hat, S):
    """Layer output error ``||W X - W_hat X||_F^2`` through the Gram matrix."""
    return decoupled_error(np.asarray(W_orig) - W_hat, S)


def _check(W, S, mask_group):
    n, m = W.shape
    if S.shape != (m, m):
        raise DataError(f"Gram matrix {S.shape} does not match weight {W.shape}")
    if mask_group is not None and tuple(mask_group.shape) != (n, m):
        raise DataError(f"mask group shape {mask_group.shape} does not match weight {W.shape}")


def spbo_factored(W, fact, mask_group, S, cfg=SpboConfig(), resign=False, presolve=True):
    """Run stepwise pruning from an initial (unpruned) factorization.

    Every step masks the sign planes, the fixed residual term and the target
    weights with the current keep-mask, then runs ``cfg.T`` refinement rounds.
    Unless ``presolve`` is off, a refinement pass on the unpruned fit
    precedes the first step (step 0 of the trace).  With
    ``resign`` the signs are re-fitted to the current shift before each
    pruning step.
    """
    W = np.asarray(W, dtype=np.float64)
    S = np.asarray(S, dtype=np.float64)
    _check(W, S, mask_group)
    full = np.ones(W.shape, dtype=bool)
    keeps = [full, *mask_group.steps] if presolve else list(mask_group.steps)
    if not keeps:
        raise DataError("nothing to do: empty mask group and presolve disabled")
    mu, alphas = fact.mu, list(fact.alphas)
    signs = list(fact.Bs)
    trace = SpboTrace()
    for k, keep in enumerate(keeps):
        if resign and (k > 0 or not presolve):
            signs = _resign(W, mu, alphas, signs, fact.residual)
        Bs = [b * keep for b in signs]
        fixed = None if fact.residual is None else fact.residual * keep
        hist = [] if cfg.track_error else None
        mu, alphas = refine_groups(S, W * keep, Bs, mu, alphas, cfg.T, cfg.eps, fixed=fixed, history=hist)
        if cfg.track_error:
            trace.half_steps.append(hist)
            step_fact = BinaryFactorization(mu, alphas, Bs, keep, fixed, fact.kind)
            trace.records.append(StepRecord(k, float(keep.mean()), total_error(W, step_fact.reconstruct(), S)))
    keep = keeps[-1]
    out = BinaryFactorization(
        mu,
        alphas,
        [b * keep for b in signs],
        keep,
        None if fact.residual is None else fact.residual * keep,
        fact.kind,
        dict(fact.extra),
    )
    return out.reconstruct(), out, trace


def _resign(W, mu, alphas, Bs, residual):
    target = W - mu[:, None] - (0.0 if residual is None else residual)
    fresh = sign(target)
    return [np.where(b != 0, sign(a)[:, None] * fresh, 0.0) for a, b in zip(alphas, Bs)]


def spbo(W, mask_group, S, cfg=SpboConfig()):
    """Stepwise pruning with binarization refinement for a plain row-binarized matrix."""
    W = np.asarray(W, dtype=np.float64)
    return spbo_factored(W, BinaryFactorization.from_binary(binary(W)), mask_group, S, cfg)


def survivor_binary(W, keep):
    """Row binarization fitted on the retained entries only."""
    W = np.asarray(W, dtype=np.float64)
    keep = np.asarray(keep, dtype=bool)
    counts = keep.sum(axis=1)
    mu = np.divide((W * keep).sum(axis=1), counts, out=np.zeros(W.shape[0]), where=counts > 0)
    W_tilde = W - mu[:, None]
    alpha = np.divide((np.abs(W_tilde) * keep).sum(axis=1), counts, out=np.zeros(W.shape[0]), where=counts > 0)
    B = sign(W_tilde) * keep
    return BinaryFactorization(mu, [alpha], [B], keep.copy())


def oneshot_prune_binarize(W, final_mask, S, T=DEFAULT_ROUNDS, eps=EPS):
    """Baseline: prune with the final mask in one go, binarize the survivors, refine ``T`` rounds.

    ``T = 0`` skips the refinement and returns the plain survivor fit.
    """
    W = np.asarray(W, dtype=np.float64)
    S = np.asarray(S, dtype=np.float64)
    keep = np.asarray(final_mask, dtype=bool)
    _check(W, S, None)
    if keep.shape != W.shape:
        raise DataError(f"mask shape {keep.shape} does not match weight {W.shape}")
    fact = survivor_binary(W, keep)
    if T == 0:
        W_hat = fact.reconstruct()
    else:
        group = MaskGroup((keep,), 0, 0, W.shape)
        W_hat, _, _ = spbo_factored(W, fact, group, S, SpboConfig(T, eps, track_error=False), presolve=False)
    return W_hat, total_error(W, W_hat, S)
