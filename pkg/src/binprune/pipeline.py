"""End-to-end driver: sequential layer-by-layer compression of a toy layer stack."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import tensorio
from .binarize import BinaryFactorization, grouped_binarize, residual_binarize
from .cfs import LayerRedundancy, allocate, lr_score
from .compensate import CompensationState, compensate_block
from .errors import ConfigError, DataError
from .gram import damped_hessian, x2s
from .maskgen import (
    MaskGroup,
    check_nm,
    hessian_scores,
    magnitude_scores,
    random_scores,
    select_salient,
    split_mask,
    wanda_scores,
)
from .metrics import average_bits, bd_score, l1_error, l2_error
from .spbo import SpboConfig, spbo_factored

PRUNE_METRICS = ("hessian", "magnitude", "random", "wanda-like")
PRUNE_TYPES = ("semi", "unstructured", "structured")
ACTIVATIONS = {"tanh": np.tanh, "relu": lambda z: np.maximum(z, 0.0), "identity": lambda z: z}


@dataclass(frozen=True)
class RunConfig:
    N_target: int = 6
    M: int = 8
    T: int = 3
    r_salient: float = 0.1
    b_size: int = 8
    split_points: int = 2
    damping: float = 0.01
    seed: int = 0
    cfs_enabled: bool = True
    spbo_enabled: bool = True
    exempt_salient: bool = False
    prune_metric: str = "hessian"
    prune_type: str = "semi"
    compensate: bool = True
    resign: bool = False
    eps: float = 1e-12

    def __post_init__(self):
        check_nm(self.N_target, self.M)
        if self.T < 1:
            raise ConfigError("T must be >= 1")
        if not 0 <= self.r_salient < 1:
            raise ConfigError("r_salient must be in [0, 1)")
        if self.b_size < 1 or self.b_size % self.M:
            raise ConfigError(f"b_size={self.b_size} must be a positive multiple of M={self.M}")
        if not 0 <= self.split_points <= 3:
            raise ConfigError("split_points must be in 0..3 (0 disables segmenting)")
        if not self.damping > 0 or not self.eps > 0:
            raise ConfigError("damping and eps must be > 0")
        if self.prune_metric not in PRUNE_METRICS:
            raise ConfigError(f"prune_metric must be one of {PRUNE_METRICS}")
        if self.prune_type not in PRUNE_TYPES:
            raise ConfigError(f"prune_type must be one of {PRUNE_TYPES}")

    @classmethod
    def from_dict(cls, raw):
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        return cls(**raw)

    @classmethod
    def from_json(cls, path):
        try:
            raw = json.loads(Path(path).read_text())
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(raw)

    def to_dict(self):
        return asdict(self)


# --------------------------------------------------------------------------
# toy model


def forward_layer(h, W, meta):
    act = ACTIVATIONS[meta.get("activation", "tanh")]
    out = act(h @ W.T)
    if meta.get("residual", True):
        if out.shape != h.shape:
            raise DataError("residual connection needs a square layer")
        out = out + h
    return out


def forward(weights, h, meta):
    """Hidden states before the first and after every layer."""
    states = [h]
    for W in weights:
        h = forward_layer(h, W, meta)
        states.append(h)
    return states


def layer_redundancy(weights, tokens, meta):
    states = forward(weights, tokens, meta)
    return LayerRedundancy.from_scores([lr_score(states[i], states[i + 1]) for i in range(len(weights))])


# --------------------------------------------------------------------------
# one layer


@dataclass
class BlockResult:
    c0: int
    c1: int
    fact: BinaryFactorization
    trace: object


@dataclass
class LayerResult:
    name: str
    W: np.ndarray
    W_hat: np.ndarray
    N: int
    salient: np.ndarray
    blocks: list
    S: np.ndarray

    @property
    def keep(self):
        return np.hstack([b.fact.keep for b in self.blocks])

    @property
    def groups(self):
        return np.hstack([b.fact.extra["groups"] for b in self.blocks])


def prune_scores(metric, W, inv_diag, X, rng):
    if metric == "hessian":
        return hessian_scores(W, inv_diag)
    if metric == "magnitude":
        return magnitude_scores(W)
    if metric == "wanda-like":
        return wanda_scores(W, X)
    return random_scores(W.shape, rng)


def build_mask_group(scores, N, M, prune_type):
    """Nested N:M masks, or a one-step mask at density N/M for the baseline pruning types."""
    if prune_type == "semi":
        return split_mask(scores, N, M)
    n, m = scores.shape
    if N == M:
        return MaskGroup((), N, M, scores.shape)
    if prune_type == "unstructured":
        keep_count = n * m * N // M
        order = np.argsort(-scores.reshape(-1), kind="stable")
        keep = np.zeros(n * m, dtype=bool)
        keep[order[:keep_count]] = True
        keep = keep.reshape(n, m)
    else:
        order = np.argsort(-scores.sum(axis=0), kind="stable")
        keep = np.zeros((n, m), dtype=bool)
        keep[:, order[: m * N // M]] = True
    return MaskGroup((keep,), N, M, scores.shape)


def init_block(Wb, salient_cols, split_points, keep=None):
    """Initial fit of one column block: residual signs on salient columns, segmented signs elsewhere.

    Groups: 0 is the salient first-order plane, ``1 + s`` the non-salient
    segment ``s``.  With ``keep`` only the retained entries are fitted.
    """
    n, width = Wb.shape
    if keep is None:
        mu = Wb.mean(axis=1)
    else:
        counts = keep.sum(axis=1)
        mu = np.divide((Wb * keep).sum(axis=1), counts, out=np.zeros(n), where=counts > 0)
    Wt = Wb - mu[:, None]
    groups = np.zeros((n, width), dtype=np.int8)
    B_sal = np.zeros((n, width))
    B2 = np.zeros((n, width))
    alpha_sal = np.zeros(n)
    alpha2 = np.zeros(n)
    if salient_cols.any():
        rf = residual_binarize(Wt[:, salient_cols], None if keep is None else keep[:, salient_cols])
        B_sal[:, salient_cols] = rf.B1
        B2[:, salient_cols] = rf.B2
        alpha_sal, alpha2 = rf.alpha1, rf.alpha2
    ns = ~salient_cols
    plan = grouped_binarize(Wt[:, ns], split_points, mask=None if keep is None else keep[:, ns])
    Bs, alphas = [B_sal], [alpha_sal]
    for s in range(split_points + 1):
        Bg = np.zeros((n, width))
        if s < plan.n_segments and ns.any():
            Bg[:, ns] = np.where(plan.segments == s, plan.B, 0.0)
            alphas.append(plan.alphas[:, s].copy())
        else:
            alphas.append(np.zeros(n))
        Bs.append(Bg)
    groups[:, ns] = plan.segments + 1
    extra = {"groups": groups, "alpha2": alpha2, "B2": B2, "thresholds": plan.thresholds}
    full = np.ones((n, width), dtype=bool) if keep is None else keep.copy()
    return BinaryFactorization(mu, alphas, Bs, full, alpha2[:, None] * B2, "residual+grouped", extra)


def quantize_layer(W, X, N, cfg, name="layer", rng=None):
    """Compress one weight matrix against calibration inputs ``X`` (tokens x m)."""
    W = np.asarray(W, dtype=np.float64)
    X = np.asarray(X, dtype=np.float64).reshape(-1, W.shape[1])
    n, m = W.shape
    check_nm(N, cfg.M, m)
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    S = x2s(X)
    H = damped_hessian(S, cfg.damping)
    inv_diag = H.inv_diag
    partition = select_salient(hessian_scores(W, inv_diag), cfg.r_salient)
    salient_mask = partition.column_mask
    state = CompensationState(W, H.H, cfg.b_size)
    spbo_cfg = SpboConfig(cfg.T, cfg.eps, track_error=True)
    blocks = []
    for c0, c1 in state.blocks():
        Wb = state.W[:, c0:c1].copy()
        scores = prune_scores(cfg.prune_metric, Wb, inv_diag[c0:c1], X[:, c0:c1], rng)
        sal = salient_mask[c0:c1]
        if cfg.exempt_salient:
            scores = np.where(sal[None, :], np.inf, scores)
        group = build_mask_group(scores, N, cfg.M, cfg.prune_type)
        Sb = S[c0:c1, c0:c1]
        if cfg.spbo_enabled or not len(group):
            fact = init_block(Wb, sal, cfg.split_points)
            W_hat_b, fact, trace = spbo_factored(Wb, fact, group, Sb, spbo_cfg, resign=cfg.resign)
        else:
            # one-shot baseline: prune once, fit the survivors, refine
            final = group.final
            fact = init_block(Wb, sal, cfg.split_points, keep=final)
            one_step = MaskGroup((final,), N, cfg.M, group.shape)
            W_hat_b, fact, trace = spbo_factored(Wb, fact, one_step, Sb, spbo_cfg, presolve=False)
        if cfg.compensate:
            compensate_block(state, Wb - W_hat_b)
        else:
            state.position = c1
        blocks.append(BlockResult(c0, c1, fact, trace))
    W_hat = np.hstack([b.fact.reconstruct() for b in blocks])
    return LayerResult(name, W, W_hat, N, partition.salient, blocks, S)


# --------------------------------------------------------------------------
# whole model


@dataclass
class QuantizedModel:
    layers: list
    meta: dict
    config: RunConfig
    lr: LayerRedundancy | None = None
    allocation: tuple = ()

    @property
    def weights(self):
        return [l.W_hat for l in self.layers]


def _tokens(calib):
    calib = np.asarray(calib, dtype=np.float64)
    return calib.reshape(-1, calib.shape[-1])


def quantize_model(weights, calib, cfg, names=None, meta=None):
    """Coarse allocation on the full-precision model, then sequential per-layer compression.

    Each layer's calibration inputs come from the already-compressed upstream layers.
    """
    meta = dict(meta or {"activation": "tanh", "residual": True})
    weights = [np.asarray(W, dtype=np.float64) for W in weights]
    names = names or [f"layer{i}" for i in range(len(weights))]
    tokens = _tokens(calib)
    if tokens.shape[1] != weights[0].shape[1]:
        raise DataError(f"calibration width {tokens.shape[1]} != in_features {weights[0].shape[1]}")
    lr = None
    if cfg.cfs_enabled and len(weights) >= 2:
        lr = layer_redundancy(weights, tokens, meta)
        alloc = allocate(lr, cfg.N_target, cfg.M).N
    else:
        alloc = (cfg.N_target,) * len(weights)
    rng = np.random.default_rng(cfg.seed)
    h = tokens
    layers = []
    for W, name, N in zip(weights, names, alloc):
        res = quantize_layer(W, h, N, cfg, name, rng)
        layers.append(res)
        h = forward_layer(h, res.W_hat, meta)
    return QuantizedModel(layers, meta, cfg, lr, tuple(alloc))


def build_report(qm):
    cfg = qm.config
    budget = average_bits(cfg.r_salient, cfg.N_target, cfg.M, cfg.b_size)
    layers = [
        {"name": l.name, "l1": l1_error(l.W, l.W_hat), "l2": l2_error(l.W, l.W_hat, l.S),
         "bd": bd_score(l.W), "n_i": int(l.N)}
        for l in qm.layers
    ]
    report = {
        "layers": layers,
        "avg_bits": {"n_param": budget.n_param, "n_storing": budget.n_storing},
        "config": cfg.to_dict(),
        "storage": storage_bits(qm),
    }
    if qm.lr is not None:
        report["cfs"] = {"lr": list(qm.lr.scores), "rank": list(qm.lr.ranks), "n_i": list(qm.allocation)}
    return report


def storage_bits(qm):
    """Sign bits actually stored against the parameter count."""
    params = sum(l.W.size for l in qm.layers)
    first = sum(int(l.keep.sum()) for l in qm.layers)
    second = sum(int((l.keep & _salient_grid(l)).sum()) for l in qm.layers)
    return {"params": params, "sign_bits": first + second, "bits_per_param": (first + second) / params}


def _salient_grid(layer):
    mask = np.zeros(layer.W.shape, dtype=bool)
    mask[:, layer.salient] = True
    return mask


def dump_json(obj, path):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


# --------------------------------------------------------------------------
# serialization of compressed layers


def save_quantized(qm, out_dir):
    """Write packed factors per layer plus a manifest of decoded dense weights."""
    out_dir = tensorio.ensure_dir(out_dir)
    entries = []
    cfg = qm.config
    for layer in qm.layers:
        ldir = tensorio.ensure_dir(out_dir / layer.name)
        keep = layer.keep
        groups = layer.groups
        salient = _salient_grid(layer)
        first = np.hstack([sum(b.fact.Bs) for b in layer.blocks])
        second = np.hstack([b.fact.extra["B2"] for b in layer.blocks])
        mu = np.stack([b.fact.mu for b in layer.blocks])
        alpha = np.stack([np.stack([*b.fact.alphas, b.fact.extra["alpha2"]]) for b in layer.blocks])
        tensorio.save_array(ldir / "keep.pbt", keep, "bitpacked-u1")
        tensorio.save_array(ldir / "groups.pbt", groups, "i8")
        tensorio.save_array(ldir / "signs.pbt", first[keep], "bitpacked-u1")
        if np.any(keep & salient):
            tensorio.save_array(ldir / "residual_signs.pbt", second[keep & salient], "bitpacked-u1")
        tensorio.save_array(ldir / "mu.pbt", mu, "f32")
        tensorio.save_array(ldir / "alpha.pbt", alpha, "f32")
        dense = load_packed_layer(ldir, layer.W.shape, cfg.b_size, layer.salient)
        tensorio.save_array(ldir / "what.pbt", dense, "f32")
        dump_json({"n": layer.W.shape[0], "m": layer.W.shape[1], "N": int(layer.N),
                   "salient": [int(c) for c in layer.salient]}, ldir / "layer.json")
        entries.append(tensorio.LayerEntry(layer.name, f"{layer.name}/what.pbt", *layer.W.shape))
    meta = {**qm.meta, "b_size": cfg.b_size, "M": cfg.M, "split_points": cfg.split_points}
    manifest = tensorio.ModelManifest(entries, meta, out_dir)
    tensorio.save_manifest(manifest, out_dir / "model.json")
    return out_dir / "model.json"


def load_packed_layer(ldir, shape, b_size, salient):
    """Rebuild a dense weight from the packed factor files of one layer."""
    ldir = Path(ldir)
    n, m = shape
    keep = tensorio.read_tensor(ldir / "keep.pbt").to_array()
    groups = tensorio.read_tensor(ldir / "groups.pbt").to_array().astype(np.int64)
    mu = tensorio.load_array(ldir / "mu.pbt")
    alpha = tensorio.load_array(ldir / "alpha.pbt")
    first = np.zeros((n, m))
    first[keep] = tensorio.read_tensor(ldir / "signs.pbt").to_array(signs=True)
    salient_grid = np.zeros((n, m), dtype=bool)
    salient_grid[:, list(salient)] = True
    second = np.zeros((n, m))
    if (ldir / "residual_signs.pbt").exists():
        second[keep & salient_grid] = tensorio.read_tensor(ldir / "residual_signs.pbt").to_array(signs=True)
    out = np.zeros((n, m))
    for blk, c0 in enumerate(range(0, m, b_size)):
        c1 = min(c0 + b_size, m)
        a = alpha[blk]
        g = groups[:, c0:c1]
        scale = np.take_along_axis(a[:-1].T, g, axis=1)
        out[:, c0:c1] = mu[blk][:, None] + scale * first[:, c0:c1] + a[-1][:, None] * second[:, c0:c1]
    return np.where(keep, out, 0.0)


def load_quantized(path):
    """Dense weights of a quantized model directory, rebuilt from the packed factors."""
    manifest = tensorio.load_manifest(Path(path) / "model.json" if Path(path).is_dir() else path)
    meta = manifest.meta
    weights = []
    for entry in manifest.layers:
        ldir = manifest.root / entry.name
        info = json.loads((ldir / "layer.json").read_text())
        weights.append(load_packed_layer(ldir, (entry.n, entry.m), int(meta["b_size"]), info["salient"]))
    return manifest, weights


# --------------------------------------------------------------------------
# evaluation and sweeps


def evaluate(weights_fp, weights_q, inputs, meta):
    """MSE of hidden states after every layer and of the final output."""
    if len(weights_fp) != len(weights_q):
        raise DataError("models have different layer counts")
    for a, b in zip(weights_fp, weights_q):
        if np.shape(a) != np.shape(b):
            raise DataError(f"layer shape mismatch {np.shape(a)} vs {np.shape(b)}")
    x = _tokens(inputs)
    fp = forward(weights_fp, x, meta)
    q = forward(weights_q, x, meta)
    per_layer = [float(np.mean((a - b) ** 2)) for a, b in zip(fp[1:], q[1:])]
    return {"per_layer_mse": per_layer, "end_to_end_mse": per_layer[-1]}


def parse_ratios(text):
    ratios = []
    for item in text.split(","):
        try:
            N, M = (int(v) for v in item.strip().split(":"))
        except ValueError as exc:
            raise ConfigError(f"bad ratio {item!r}; expected N:M") from exc
        if not 1 <= N <= M:
            raise ConfigError(f"ratio {item!r} needs 1 <= N <= M")
        ratios.append((N, M))
    if not ratios:
        raise ConfigError("no ratios given")
    return ratios


@dataclass
class SweepRow:
    ratio: str
    l2_total: float
    l1: float
    bd: float


def sweep(weights, calib, cfg, ratios, names=None, meta=None):
    """One compression pass per N:M ratio with uniform N across layers."""
    rows = []
    for N, M in ratios:
        run_cfg = replace(cfg, N_target=N, M=M, cfs_enabled=False)
        qm = quantize_model(weights, calib, run_cfg, names, meta)
        rows.append(SweepRow(
            f"{N}:{M}",
            sum(l2_error(l.W, l.W_hat, l.S) for l in qm.layers),
            sum(l1_error(l.W, l.W_hat) for l in qm.layers),
            float(np.mean([bd_score(l.W, l.keep) for l in qm.layers])),
        ))
    return rows


def sweep_csv(rows):
    lines = ["ratio,l2_total,l1,bd"]
    lines += [f"{r.ratio},{r.l2_total:.10e},{r.l1:.10e},{r.bd:.10e}" for r in rows]
    return "\n".join(lines) + "\n"
