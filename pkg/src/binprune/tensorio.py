"""PBT1 tensor container, model manifests and seeded synthetic data.

PBT1 layout (all integers little endian)::

    b"PBT1" | version u8 (=1) | dtype u8 | ndim u8 | dims u64 * ndim | payload

Payloads are row-major.  ``bitpacked-u1`` packs eight elements per byte,
least significant bit first; bit 1 encodes +1 (or True) and bit 0 encodes -1
(or False).
"""

from __future__ import annotations

import json
import math
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, TensorFormatError

MAGIC = b"PBT1"
VERSION = 1
MAX_NDIM = 4

DTYPE_CODES = {"f32": 0, "f64": 1, "i8": 2, "bitpacked-u1": 3}
_CODE_TO_DTYPE = {v: k for k, v in DTYPE_CODES.items()}
_NUMPY_DTYPES = {"f32": np.dtype("<f4"), "f64": np.dtype("<f8"), "i8": np.dtype("i1")}


def payload_size(dtype, dims):
    count = math.prod(dims)
    if dtype == "bitpacked-u1":
        return (count + 7) // 8
    return count * _NUMPY_DTYPES[dtype].itemsize


@dataclass(frozen=True)
class TensorFile:
    dtype: str
    dims: tuple
    payload: bytes

    def __post_init__(self):
        if self.dtype not in DTYPE_CODES:
            raise DataError(f"unknown dtype {self.dtype!r}")
        dims = tuple(int(d) for d in self.dims)
        object.__setattr__(self, "dims", dims)
        if not 1 <= len(dims) <= MAX_NDIM:
            raise DataError(f"ndim must be in [1, {MAX_NDIM}], got {len(dims)}")
        if any(d < 1 for d in dims):
            raise DataError(f"all dims must be >= 1, got {dims}")
        if len(self.payload) != payload_size(self.dtype, dims):
            raise DataError(
                f"payload is {len(self.payload)} bytes, expected "
                f"{payload_size(self.dtype, dims)} for {self.dtype} {dims}"
            )

    @property
    def ndim(self):
        return len(self.dims)

    @classmethod
    def from_array(cls, array, dtype="f32"):
        """Encode ``array``.  For ``bitpacked-u1`` nonnegative/True entries map to bit 1."""
        array = np.asarray(array)
        if array.ndim == 0:
            raise DataError("0-dim tensors are not representable")
        if dtype == "bitpacked-u1":
            bits = (array > 0) if array.dtype != np.bool_ else array
            payload = np.packbits(bits.reshape(-1), bitorder="little").tobytes()
        elif dtype in _NUMPY_DTYPES:
            payload = np.ascontiguousarray(array, dtype=_NUMPY_DTYPES[dtype]).tobytes()
        else:
            raise DataError(f"unknown dtype {dtype!r}")
        return cls(dtype, array.shape, payload)

    def to_array(self, signs=False):
        """Decode the payload.

        Bit-packed tensors decode to bool, or to +1/-1 float64 when ``signs``.
        """
        if self.dtype == "bitpacked-u1":
            count = math.prod(self.dims)
            bits = np.unpackbits(
                np.frombuffer(self.payload, dtype=np.uint8), count=count, bitorder="little"
            ).astype(bool)
            bits = bits.reshape(self.dims)
            return np.where(bits, 1.0, -1.0) if signs else bits
        return np.frombuffer(self.payload, dtype=_NUMPY_DTYPES[self.dtype]).reshape(self.dims).copy()

    def to_bytes(self):
        header = MAGIC + struct.pack("<BBB", VERSION, DTYPE_CODES[self.dtype], self.ndim)
        header += struct.pack(f"<{self.ndim}Q", *self.dims)
        return header + self.payload

    @classmethod
    def from_bytes(cls, data):
        if len(data) < 7:
            raise TensorFormatError("bad-header", "file shorter than the fixed header")
        if data[:4] != MAGIC:
            raise TensorFormatError("bad-magic", f"bad magic {data[:4]!r}")
        version, code, ndim = struct.unpack_from("<BBB", data, 4)
        if version != VERSION:
            raise TensorFormatError("bad-version", f"unsupported version {version}")
        if code not in _CODE_TO_DTYPE:
            raise TensorFormatError("unknown-dtype", f"unknown dtype code {code}")
        if not 1 <= ndim <= MAX_NDIM:
            raise TensorFormatError("bad-header", f"invalid ndim {ndim}")
        offset = 7 + 8 * ndim
        if len(data) < offset:
            raise TensorFormatError("bad-header", "truncated dims")
        dims = struct.unpack_from(f"<{ndim}Q", data, 7)
        if any(d < 1 for d in dims):
            raise TensorFormatError("bad-header", f"invalid dims {dims}")
        dtype = _CODE_TO_DTYPE[code]
        expected = payload_size(dtype, dims)
        payload = data[offset:]
        if len(payload) < expected:
            raise TensorFormatError(
                "truncated-payload", f"payload has {len(payload)} of {expected} bytes"
            )
        if len(payload) > expected:
            raise TensorFormatError("bad-header", "trailing bytes after payload")
        return cls(dtype, dims, bytes(payload))


def write_tensor(t, path):
    with open(path, "wb") as fh:
        fh.write(t.to_bytes())


def read_tensor(path):
    with open(path, "rb") as fh:
        return TensorFile.from_bytes(fh.read())


def save_array(path, array, dtype="f32"):
    write_tensor(TensorFile.from_array(array, dtype), path)


def load_array(path):
    """Read a numeric PBT1 tensor as float64."""
    return read_tensor(path).to_array().astype(np.float64)


# --------------------------------------------------------------------------
# manifests


@dataclass(frozen=True)
class LayerEntry:
    name: str
    weight: str
    n: int
    m: int


@dataclass
class ModelManifest:
    layers: list
    meta: dict = field(default_factory=dict)
    root: Path = Path(".")

    def __post_init__(self):
        if not self.layers:
            raise DataError("manifest has no layers")
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if prev.n != nxt.m:
                raise DataError(
                    f"layer {prev.name!r} has out_features {prev.n} but "
                    f"{nxt.name!r} has in_features {nxt.m}"
                )

    def weight_path(self, layer):
        return self.root / layer.weight

    def load_weights(self):
        weights = []
        for layer in self.layers:
            w = load_array(self.weight_path(layer))
            if w.shape != (layer.n, layer.m):
                raise DataError(
                    f"weight {layer.weight!r} has shape {w.shape}, manifest says {(layer.n, layer.m)}"
                )
            weights.append(w)
        return weights

    def to_json(self):
        return {
            "layers": [{"name": l.name, "weight": l.weight, "n": l.n, "m": l.m} for l in self.layers],
            "meta": self.meta,
        }


def load_manifest(path):
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
        layers = [LayerEntry(str(e["name"]), str(e["weight"]), int(e["n"]), int(e["m"])) for e in raw["layers"]]
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise DataError(f"cannot read manifest {path}: {exc}") from exc
    return ModelManifest(layers, dict(raw.get("meta", {})), path.parent)


def save_manifest(manifest, path):
    Path(path).write_text(json.dumps(manifest.to_json(), indent=2, sort_keys=True) + "\n")


# --------------------------------------------------------------------------
# synthetic data

DISTRIBUTIONS = ("gaussian", "laplace", "student-t")


@dataclass(frozen=True)
class SyntheticSpec:
    """Seeded recipe for a toy layer stack and its calibration batch.

    ``channel_spread`` is the log-std of per-input-channel activation scales;
    nonzero values give the outlier channels typical of LLM activations.
    """

    seed: int = 0
    distribution: str = "student-t"
    n: int = 16
    m: int = 16
    b_count: int = 4
    l: int = 32
    df: float = 3.0
    layers: int = 1
    gain: float = 1.0
    channel_spread: float = 1.0

    def validate(self):
        if self.distribution not in DISTRIBUTIONS:
            raise ConfigError(f"unknown distribution {self.distribution!r}")
        if self.distribution == "student-t" and not self.df > 2:
            raise ConfigError(f"student-t needs df > 2 for finite variance, got {self.df}")
        if min(self.n, self.m, self.b_count, self.l, self.layers) < 1:
            raise ConfigError("all extents must be >= 1")
        if self.layers > 1 and self.n != self.m:
            raise ConfigError("multi-layer stacks must be square (n == m)")


def sample_unit_variance(rng, distribution, size, df=3.0):
    if distribution == "gaussian":
        return rng.standard_normal(size)
    if distribution == "laplace":
        return rng.laplace(0.0, 1.0 / math.sqrt(2.0), size)
    if distribution == "student-t":
        if not df > 2:
            raise ConfigError(f"student-t needs df > 2, got {df}")
        return rng.standard_t(df, size) * math.sqrt((df - 2.0) / df)
    raise ConfigError(f"unknown distribution {distribution!r}")


def gen_synthetic(spec):
    """Return ``(weights, calibration)`` fully determined by ``spec.seed``.

    ``weights`` is a list of ``(n, m)`` arrays, ``calibration`` has shape
    ``(b_count, l, m)``.
    """
    spec.validate()
    w_seq, x_seq, _ = np.random.SeedSequence(spec.seed).spawn(3)
    w_rng = np.random.default_rng(w_seq)
    weights = [
        spec.gain / math.sqrt(spec.m) * sample_unit_variance(w_rng, spec.distribution, (spec.n, spec.m), spec.df)
        for _ in range(spec.layers)
    ]
    x_rng = np.random.default_rng(x_seq)
    channel_scale = np.exp(spec.channel_spread * x_rng.standard_normal(spec.m))
    calib = x_rng.standard_normal((spec.b_count, spec.l, spec.m)) * channel_scale
    return weights, calib


def gen_inputs(spec, count):
    """Held-out inputs with the calibration channel scales, shape ``(count, m)``."""
    spec.validate()
    _, x_seq, held_seq = np.random.SeedSequence(spec.seed).spawn(3)
    channel_scale = np.exp(spec.channel_spread * np.random.default_rng(x_seq).standard_normal(spec.m))
    return np.random.default_rng(held_seq).standard_normal((count, spec.m)) * channel_scale


def write_synthetic_model(spec, out_dir, meta=None):
    """Write weights, manifest and calibration for ``spec`` into ``out_dir``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    weights, calib = gen_synthetic(spec)
    entries = []
    for i, w in enumerate(weights):
        fname = f"layer{i}.pbt"
        save_array(out_dir / fname, w, "f32")
        entries.append(LayerEntry(f"layer{i}", fname, w.shape[0], w.shape[1]))
    manifest = ModelManifest(entries, dict(meta or {"activation": "tanh", "residual": True}), out_dir)
    save_manifest(manifest, out_dir / "model.json")
    save_array(out_dir / "calib.pbt", calib, "f32")
    save_array(out_dir / "inputs.pbt", gen_inputs(spec, 256), "f32")
    return out_dir / "model.json", out_dir / "calib.pbt", out_dir / "inputs.pbt"


def ensure_dir(path):
    os.makedirs(path, exist_ok=True)
    return Path(path)
