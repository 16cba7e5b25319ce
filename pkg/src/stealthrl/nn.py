"""Small fully-connected networks with exact reverse-mode gradients.

Parameters live in one flat float64 vector; each layer's weight matrix
(fan_in x fan_out) is followed by its bias.  Inputs are z-scored with a stored
per-dimension normalizer before the first layer, and ``backward`` returns
gradients with respect to both the parameters and the raw (un-normalized)
input.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

ACTIVATIONS = ("tanh", "relu")
HEADS = ("linear", "softmax", "tanh")

MAGIC = b"SRLM"
FORMAT_VERSION = 1


class DimensionError(ValueError):
    pass


class ModelFormatError(ValueError):
    pass


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass
class Gradients:
    d_params: np.ndarray
    d_input: np.ndarray


@dataclass
class Mlp:
    sizes: list
    activation: str = "tanh"
    head: str = "linear"
    params: np.ndarray = None
    in_mean: np.ndarray = None
    in_std: np.ndarray = None
    out_mean: np.ndarray = None
    out_std: np.ndarray = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.sizes = [int(s) for s in self.sizes]
        if len(self.sizes) < 2 or min(self.sizes) < 1:
            raise DimensionError(f"bad layer sizes {self.sizes}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")
        if self.head not in HEADS:
            raise ValueError(f"head must be one of {HEADS}")
        n_in, n_out = self.sizes[0], self.sizes[-1]
        if self.params is None:
            self.params = np.zeros(self.n_params)
        self.params = np.asarray(self.params, dtype=np.float64)
        if self.params.shape != (self.n_params,):
            raise DimensionError(f"expected {self.n_params} params, got {self.params.shape}")
        self.in_mean = np.zeros(n_in) if self.in_mean is None else np.asarray(self.in_mean, np.float64)
        self.in_std = np.ones(n_in) if self.in_std is None else np.asarray(self.in_std, np.float64)
        self.out_mean = np.zeros(n_out) if self.out_mean is None else np.asarray(self.out_mean, np.float64)
        self.out_std = np.ones(n_out) if self.out_std is None else np.asarray(self.out_std, np.float64)
        for name, arr, n in (("in_mean", self.in_mean, n_in), ("in_std", self.in_std, n_in),
                             ("out_mean", self.out_mean, n_out), ("out_std", self.out_std, n_out)):
            if arr.shape != (n,):
                raise DimensionError(f"{name} must have shape ({n},)")
        if np.any(self.in_std <= 0) or np.any(self.out_std <= 0):
            raise ValueError("normalizer std components must be > 0")

    @classmethod
    def init(cls, sizes, activation="tanh", head="linear", seed=0, **kw) -> "Mlp":
        """Xavier-uniform weights, zero biases."""
        rng = np.random.default_rng(seed)
        net = cls(sizes, activation, head, **kw)
        for W, b in net.layers():
            lim = np.sqrt(6.0 / (W.shape[0] + W.shape[1]))
            W[...] = rng.uniform(-lim, lim, size=W.shape)
            b[...] = 0.0
        return net

    @property
    def n_params(self) -> int:
        return sum((a + 1) * b for a, b in zip(self.sizes[:-1], self.sizes[1:]))

    @property
    def in_dim(self) -> int:
        return self.sizes[0]

    @property
    def out_dim(self) -> int:
        return self.sizes[-1]

    def layers(self, params=None):
        """(W, b) views into ``params`` (defaults to this net's own vector)."""
        p = self.params if params is None else params
        out, i = [], 0
        for a, b in zip(self.sizes[:-1], self.sizes[1:]):
            W = p[i: i + a * b].reshape(a, b)
            i += a * b
            out.append((W, p[i: i + b]))
            i += b
        return out

    def copy(self) -> "Mlp":
        return Mlp(list(self.sizes), self.activation, self.head, self.params.copy(),
                   self.in_mean.copy(), self.in_std.copy(), self.out_mean.copy(),
                   self.out_std.copy(), dict(self.meta))

    def set_input_normalizer(self, X: np.ndarray, floor: float = 1e-6):
        X = np.asarray(X, dtype=np.float64)
        self.in_mean = X.mean(axis=0)
        std = X.std(axis=0)
        self.in_std = np.where(std > floor, std, 1.0)

    def _check(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.in_dim or x.ndim > 2:
            raise DimensionError(f"input has shape {x.shape}, expected (..., {self.in_dim})")
        return x

    def _run(self, x):
        h = (x - self.in_mean) / self.in_std
        acts = [h]
        layers = self.layers()
        for j, (W, b) in enumerate(layers):
            z = h @ W + b
            if j < len(layers) - 1:
                h = np.tanh(z) if self.activation == "tanh" else np.maximum(z, 0.0)
            else:
                h = z
            acts.append(h)
        return acts

    def _head(self, z):
        if self.head == "softmax":
            return softmax(z)
        if self.head == "tanh":
            return np.tanh(z)
        return z

    def logits(self, x) -> np.ndarray:
        return self._run(self._check(x))[-1]

    def forward(self, x) -> np.ndarray:
        return self._head(self.logits(x))

    __call__ = forward

    def backward(self, x, upstream, through_head: bool = True) -> Gradients:
        """Gradients of ``sum(upstream * output)``.

        With ``through_head=False`` the upstream is taken with respect to the
        pre-head logits instead of the head output.
        """
        x = self._check(x)
        single = x.ndim == 1
        X = x[None, :] if single else x
        g = np.asarray(upstream, dtype=np.float64)
        g = g[None, :] if g.ndim == 1 else g
        if g.shape != (X.shape[0], self.out_dim):
            raise DimensionError(f"upstream has shape {np.shape(upstream)}, expected output dim {self.out_dim}")
        acts = self._run(X)
        z = acts[-1]
        if through_head and self.head == "softmax":
            y = softmax(z)
            g = y * (g - (g * y).sum(axis=1, keepdims=True))
        elif through_head and self.head == "tanh":
            g = g * (1.0 - np.tanh(z) ** 2)
        d_params = np.zeros_like(self.params)
        grads = self.layers(d_params)
        layers = self.layers()
        for j in range(len(layers) - 1, -1, -1):
            W, _ = layers[j]
            h_in = acts[j]
            grads[j][0][...] = h_in.T @ g
            grads[j][1][...] = g.sum(axis=0)
            g = g @ W.T
            if j > 0:
                if self.activation == "tanh":
                    g = g * (1.0 - h_in ** 2)
                else:
                    g = g * (h_in > 0)
        d_input = g / self.in_std
        return Gradients(d_params, d_input[0] if single else d_input)


# ---------------------------------------------------------------------------
# optimizers


@dataclass
class OptConfig:
    lr: float = 1e-3
    kind: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class OptState:
    m: np.ndarray = None
    v: np.ndarray = None
    t: int = 0


def optimizer_step(params: np.ndarray, grads: np.ndarray, state: OptState | None, cfg: OptConfig):
    """One descent step; returns ``(new_params, new_state)``."""
    params = np.asarray(params, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if params.shape != grads.shape:
        raise DimensionError("params and grads differ in shape")
    if not np.all(np.isfinite(grads)):
        raise FloatingPointError("non-finite gradient; step rejected")
    state = state or OptState()
    if cfg.kind == "sgd":
        return params - cfg.lr * grads, OptState(t=state.t + 1)
    if cfg.kind != "adam":
        raise ValueError(f"unknown optimizer {cfg.kind!r}")
    m = np.zeros_like(params) if state.m is None else state.m
    v = np.zeros_like(params) if state.v is None else state.v
    t = state.t + 1
    m = cfg.beta1 * m + (1 - cfg.beta1) * grads
    v = cfg.beta2 * v + (1 - cfg.beta2) * grads * grads
    m_hat = m / (1 - cfg.beta1 ** t)
    v_hat = v / (1 - cfg.beta2 ** t)
    return params - cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.eps), OptState(m, v, t)


# ---------------------------------------------------------------------------
# persistence
#
# little-endian: magic(4) version:u32 n_sizes:u32 sizes:u32[n] activation:u8
# head:u8 in_mean in_std out_mean out_std (f64 arrays) meta_len:u32 meta(utf-8
# JSON) n_params:u64 params:f64[n_params]


def save_model(net: Mlp, path) -> None:
    meta = json.dumps(net.meta, sort_keys=True).encode()
    parts = [
        MAGIC,
        struct.pack("<II", FORMAT_VERSION, len(net.sizes)),
        struct.pack(f"<{len(net.sizes)}I", *net.sizes),
        struct.pack("<BB", ACTIVATIONS.index(net.activation), HEADS.index(net.head)),
        net.in_mean.astype("<f8").tobytes(),
        net.in_std.astype("<f8").tobytes(),
        net.out_mean.astype("<f8").tobytes(),
        net.out_std.astype("<f8").tobytes(),
        struct.pack("<I", len(meta)),
        meta,
        struct.pack("<Q", net.n_params),
        net.params.astype("<f8").tobytes(),
    ]
    Path(path).write_bytes(b"".join(parts))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf, self.pos = buf, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise ModelFormatError("truncated model file")
        out = self.buf[self.pos: self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def f64(self, n: int) -> np.ndarray:
        return np.frombuffer(self.take(8 * n), dtype="<f8").astype(np.float64)


def load_model(path, expect_sizes=None) -> Mlp:
    r = _Reader(Path(path).read_bytes())
    if r.take(4) != MAGIC:
        raise ModelFormatError(f"{path}: not a model file (bad magic)")
    version, n_sizes = r.unpack("<II")
    if version != FORMAT_VERSION:
        raise ModelFormatError(f"{path}: format version {version}, expected {FORMAT_VERSION}")
    if not 2 <= n_sizes <= 64:
        raise ModelFormatError(f"{path}: implausible layer count {n_sizes}")
    sizes = list(r.unpack(f"<{n_sizes}I"))
    act, head = r.unpack("<BB")
    if act >= len(ACTIVATIONS) or head >= len(HEADS):
        raise ModelFormatError(f"{path}: unknown activation/head code")
    in_mean, in_std = r.f64(sizes[0]), r.f64(sizes[0])
    out_mean, out_std = r.f64(sizes[-1]), r.f64(sizes[-1])
    (meta_len,) = r.unpack("<I")
    meta = json.loads(r.take(meta_len).decode())
    (n_params,) = r.unpack("<Q")
    params = r.f64(n_params)
    if r.pos != len(r.buf):
        raise ModelFormatError(f"{path}: trailing bytes")
    if expect_sizes is not None and list(expect_sizes) != sizes:
        raise DimensionError(f"{path}: topology {sizes} does not match expected {list(expect_sizes)}")
    return Mlp(sizes, ACTIVATIONS[act], HEADS[head], params, in_mean, in_std, out_mean, out_std, meta)
