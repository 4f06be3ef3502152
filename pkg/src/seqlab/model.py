"""Small fully-connected classifier with hand-written backprop.

flatten -> [Linear -> ReLU] * len(hidden_dims) -> Linear
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .problib import softmax
from .rng import RngStream

CKPT_MAGIC = b"SQLBCKPT"
CKPT_VERSION = 1


class ModelError(ValueError):
    """Bad model configuration or input shape."""


@dataclass(frozen=True)
class ModelConfig:
    input_dim: int
    num_classes: int
    hidden_dims: tuple[int, ...] = (64,)
    init_seed: int = 0
    init_scale: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        dims = (self.input_dim, *self.hidden_dims, self.num_classes)
        if any(d < 1 for d in dims):
            raise ModelError(f"all layer sizes must be >= 1, got {dims}")

    @property
    def layer_dims(self) -> list[tuple[int, int]]:
        dims = (self.input_dim, *self.hidden_dims, self.num_classes)
        return list(zip(dims[:-1], dims[1:]))

    @property
    def num_params(self) -> int:
        return sum(i * o + o for i, o in self.layer_dims)


@dataclass
class ParamSet:
    """Per-layer weights (fan_in x fan_out) and biases.

    Flat order: W0, b0, W1, b1, ... each row-major. Also used for gradients
    and momentum buffers.
    """

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def flat(self) -> np.ndarray:
        parts = []
        for w, b in zip(self.weights, self.biases):
            parts += [w.ravel(), b.ravel()]
        return np.concatenate(parts) if parts else np.zeros(0)

    @classmethod
    def from_flat(cls, config: ModelConfig, flat) -> "ParamSet":
        flat = np.asarray(flat, dtype=np.float64)
        if flat.size != config.num_params:
            raise ModelError(f"expected {config.num_params} parameters, got {flat.size}")
        ws, bs, pos = [], [], 0
        for i, o in config.layer_dims:
            ws.append(flat[pos : pos + i * o].reshape(i, o).copy())
            pos += i * o
            bs.append(flat[pos : pos + o].copy())
            pos += o
        return cls(ws, bs)

    def arrays(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def map(self, fn, *others: "ParamSet") -> "ParamSet":
        """Elementwise ``fn(self_array, *other_arrays)`` over every tensor."""
        ws = [fn(w, *(o.weights[i] for o in others)) for i, w in enumerate(self.weights)]
        bs = [fn(b, *(o.biases[i] for o in others)) for i, b in enumerate(self.biases)]
        return ParamSet(ws, bs)

    def copy(self) -> "ParamSet":
        return self.map(np.copy)

    def zeros_like(self) -> "ParamSet":
        return self.map(np.zeros_like)

    def shapes(self):
        return [a.shape for a in self.arrays()]


Gradients = ParamSet


def init(config: ModelConfig) -> ParamSet:
    """Weights ~ U(-a, a), a = init_scale * sqrt(3 / fan_in) (unit variance
    before scaling); biases zero."""
    gen = np.random.Generator(np.random.PCG64(RngStream(config.init_seed).derive("init").seed))
    ws, bs = [], []
    for fan_in, fan_out in config.layer_dims:
        bound = config.init_scale * np.sqrt(3.0 / fan_in)
        ws.append(gen.uniform(-1.0, 1.0, size=(fan_in, fan_out)) * bound)
        bs.append(np.zeros(fan_out))
    return ParamSet(ws, bs)


def to_inputs(batch) -> np.ndarray:
    """Stack images (or pass through flat vectors) as an (N, D) float array in [0, 1]."""
    if isinstance(batch, np.ndarray):
        return batch.astype(np.float64, copy=False)
    items = list(batch)
    if not items:
        return np.zeros((0, 0))
    if hasattr(items[0], "pixels"):
        return np.stack([im.pixels.reshape(-1) for im in items]).astype(np.float64) / 255.0
    return np.asarray(items, dtype=np.float64)


@dataclass
class ForwardCache:
    params: ParamSet
    inputs: list[np.ndarray] = field(default_factory=list)  # input to each layer
    pre: list[np.ndarray] = field(default_factory=list)  # hidden pre-activations


def forward(params: ParamSet, batch) -> tuple[np.ndarray, ForwardCache]:
    x = to_inputs(batch)
    if x.ndim != 2 or (x.shape[0] and x.shape[1] != params.weights[0].shape[0]):
        raise ModelError(
            f"input of shape {x.shape} does not match input_dim {params.weights[0].shape[0]}"
        )
    if x.shape[0] == 0:
        x = np.zeros((0, params.weights[0].shape[0]))
    cache = ForwardCache(params)
    h = x
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        cache.inputs.append(h)
        z = h @ w + b
        if i < last:
            cache.pre.append(z)
            h = np.maximum(z, 0.0)
        else:
            h = z
    return h, cache


def backward(cache: ForwardCache, dlogits) -> Gradients:
    params = cache.params
    d = np.asarray(dlogits, dtype=np.float64)
    n_out = params.weights[-1].shape[1]
    if d.shape != (cache.inputs[0].shape[0], n_out):
        raise RuntimeError(
            f"dlogits shape {d.shape} does not match cached forward "
            f"({cache.inputs[0].shape[0]}, {n_out})"
        )
    k = len(params.weights)
    dws, dbs = [None] * k, [None] * k
    for i in range(k - 1, -1, -1):
        dws[i] = cache.inputs[i].T @ d
        dbs[i] = d.sum(axis=0)
        if i > 0:
            d = (d @ params.weights[i].T) * (cache.pre[i - 1] > 0)
    return ParamSet(dws, dbs)


def predict_proba(params: ParamSet, batch) -> np.ndarray:
    logits, _ = forward(params, batch)
    return softmax(logits)


# ---------------------------------------------------------------- checkpoints


def save_checkpoint(path, config: ModelConfig, params: ParamSet) -> None:
    """magic | u32 version | u32 len | config JSON | u64 n | n x <f8."""
    cfg = json.dumps(asdict(config), sort_keys=True, separators=(",", ":")).encode()
    flat = params.flat().astype("<f8")
    blob = (
        CKPT_MAGIC
        + struct.pack("<II", CKPT_VERSION, len(cfg))
        + cfg
        + struct.pack("<Q", flat.size)
        + flat.tobytes()
    )
    Path(path).write_bytes(blob)


def load_checkpoint(path) -> tuple[ModelConfig, ParamSet]:
    data = Path(path).read_bytes()
    if data[:8] != CKPT_MAGIC:
        raise ModelError(f"{path}: not a checkpoint (bad magic)")
    version, clen = struct.unpack_from("<II", data, 8)
    if version != CKPT_VERSION:
        raise ModelError(f"{path}: unsupported checkpoint version {version}")
    pos = 16
    cfg = ModelConfig(**json.loads(data[pos : pos + clen]))
    pos += clen
    (n,) = struct.unpack_from("<Q", data, pos)
    pos += 8
    flat = np.frombuffer(data, dtype="<f8", count=n, offset=pos)
    return cfg, ParamSet.from_flat(cfg, flat)
