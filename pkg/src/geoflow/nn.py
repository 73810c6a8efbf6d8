"""Small models on top of :mod:`geoflow.autograd`: MLP, global attention, AdamW.

Everything is float64. Parameters live in ordered ``dict[str, Tensor]``
mappings so checkpoints are stable across runs.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autograd import Tensor, as_tensor, concat
from .errors import ContractError, CorruptionError, ShapeError

CHECKPOINT_MAGIC = b"GFCK"
CHECKPOINT_VERSION = 1


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


class Module:
    """Base for anything owning named parameters."""

    def parameters(self) -> dict[str, Tensor]:
        raise NotImplementedError

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.parameters().items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = self.parameters()
        if set(params) != set(state):
            raise ContractError(f"parameter names differ: {sorted(set(params) ^ set(state))}")
        for k, p in params.items():
            if p.shape != np.shape(state[k]):
                raise ShapeError(f"{k}: expected {p.shape}, got {np.shape(state[k])}")
            p.data[...] = state[k]

    def zero_grad(self) -> None:
        for p in self.parameters().values():
            p.grad = None

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters().values())


class MLP(Module):
    """Affine layers with GELU between them (none after the last)."""

    def __init__(self, sizes: list[int], rng: np.random.Generator | None = None, prefix: str = "mlp"):
        if len(sizes) < 2:
            raise ValueError("MLP needs at least input and output sizes")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.sizes = list(sizes)
        self.prefix = prefix
        self.weights = [
            Tensor(_glorot(rng, a, b), requires_grad=True, name=f"{prefix}.w{i}")
            for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:]))
        ]
        self.biases = [
            Tensor(np.zeros(b), requires_grad=True, name=f"{prefix}.b{i}") for i, b in enumerate(sizes[1:])
        ]

    def parameters(self) -> dict[str, Tensor]:
        out = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"{self.prefix}.w{i}"] = w
            out[f"{self.prefix}.b{i}"] = b
        return out

    def __call__(self, x, return_hidden: bool = False):
        """Forward pass. With ``return_hidden`` also returns every post-activation hidden layer."""
        x = as_tensor(x)
        if x.shape[-1] != self.sizes[0]:
            raise ShapeError(f"MLP expects width {self.sizes[0]}, got {x.shape[-1]}")
        hidden = []
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            x = x @ w + b
            if i < last:
                x = x.gelu()
                hidden.append(x)
        return (x, hidden) if return_hidden else x


def forward_mlp(model: MLP, inputs) -> Tensor:
    return model(inputs)


class AttentionBlock(Module):
    """Single-head scaled dot-product self-attention over the full sequence.

    ``mask`` is an optional boolean [seq, seq] array; False entries are
    blocked (their softmax weight is exactly zero).
    """

    def __init__(self, dim: int, rng: np.random.Generator | None = None, prefix: str = "attn"):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.dim = dim
        self.prefix = prefix
        self.wq = Tensor(_glorot(rng, dim, dim), requires_grad=True)
        self.wk = Tensor(_glorot(rng, dim, dim), requires_grad=True)
        self.wv = Tensor(_glorot(rng, dim, dim), requires_grad=True)
        self.wo = Tensor(_glorot(rng, dim, dim), requires_grad=True)
        self.bo = Tensor(np.zeros(dim), requires_grad=True)

    def parameters(self) -> dict[str, Tensor]:
        p = self.prefix
        return {f"{p}.wq": self.wq, f"{p}.wk": self.wk, f"{p}.wv": self.wv, f"{p}.wo": self.wo, f"{p}.bo": self.bo}

    def __call__(self, tokens, mask: np.ndarray | None = None) -> Tensor:
        x = as_tensor(tokens)
        if x.ndim != 3 or x.shape[-1] != self.dim:
            raise ShapeError(f"attention expects [batch, seq, {self.dim}], got {x.shape}")
        q, k, v = x @ self.wq, x @ self.wk, x @ self.wv
        logits = (q @ k.swapaxes(-1, -2)) * (1.0 / np.sqrt(self.dim))
        if mask is not None:
            mask = np.asarray(mask, dtype=bool)
            if mask.shape != (x.shape[1], x.shape[1]):
                raise ShapeError(f"mask shape {mask.shape} does not match sequence length {x.shape[1]}")
            logits = logits + np.where(mask, 0.0, -np.inf)
        weights = logits.softmax(axis=-1)
        return (weights @ v) @ self.wo + self.bo


def attention_block(block: AttentionBlock, tokens, mask=None) -> Tensor:
    return block(tokens, mask)


def block_diagonal_mask(seq: int, split: int) -> np.ndarray:
    """Attention mask that forbids tokens in [0, split) and [split, seq) from seeing each other."""
    idx = np.arange(seq) < split
    return idx[:, None] == idx[None, :]


def dispersion_loss(features, tau: float = 1.0, include_self: bool = True) -> Tensor:
    """log of the mean over sample pairs of exp(-||f_i - f_j||^2 / tau).

    ``include_self`` keeps the i == j pairs (ordered pairs, B^2 terms); the
    exclusive variant averages over the B(B-1) pairs with i != j.
    """
    f = as_tensor(features)
    if f.ndim != 2:
        f = f.reshape(f.shape[0], -1)
    b = f.shape[0]
    if b < 1 or (not include_self and b < 2):
        raise ContractError("dispersion loss needs a non-empty batch (>= 2 without self pairs)")
    diff = f.reshape(b, 1, -1) - f.reshape(1, b, -1)
    d2 = diff.square().sum(axis=2)
    logits = d2 * (-1.0 / tau)
    count = b * b
    if not include_self:
        logits = logits + np.where(np.eye(b, dtype=bool), -np.inf, 0.0)
        count = b * (b - 1)
    return logits.logsumexp() - np.log(count)


@dataclass
class AdamW:
    """Bias-corrected Adam with decoupled weight decay."""

    params: dict[str, Tensor]
    lr: float = 1e-4
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        for k, p in self.params.items():
            self.m.setdefault(k, np.zeros_like(p.data))
            self.v.setdefault(k, np.zeros_like(p.data))

    def step(self) -> None:
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1**t
        c2 = 1.0 - self.beta2**t
        for k, p in self.params.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            p.data *= 1.0 - self.lr * self.weight_decay
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            p.data -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None


def adamw_step(state: AdamW) -> None:
    state.step()


def save_checkpoint(path, state: dict[str, np.ndarray]) -> None:
    """Flat binary: magic, version, count, then (name len, name, ndim, shape, float64 LE data)."""
    chunks = [CHECKPOINT_MAGIC, struct.pack("<II", CHECKPOINT_VERSION, len(state))]
    for name, arr in state.items():
        arr = np.asarray(arr, dtype=np.float64)
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(np.ascontiguousarray(arr).astype("<f8").tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_checkpoint(path) -> dict[str, np.ndarray]:
    raw = Path(path).read_bytes()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise CorruptionError(f"{path}: bad checkpoint magic")
    try:
        version, count = struct.unpack_from("<II", raw, 4)
        if version != CHECKPOINT_VERSION:
            raise CorruptionError(f"{path}: unsupported checkpoint version {version}")
        pos = 12
        state = {}
        for _ in range(count):
            (n,) = struct.unpack_from("<I", raw, pos)
            pos += 4
            name = raw[pos : pos + n].decode("utf-8")
            pos += n
            (ndim,) = struct.unpack_from("<I", raw, pos)
            pos += 4
            shape = struct.unpack_from(f"<{ndim}I", raw, pos)
            pos += 4 * ndim
            size = int(np.prod(shape)) if ndim else 1
            if pos + 8 * size > len(raw):
                raise CorruptionError(f"{path}: truncated tensor {name!r}")
            state[name] = np.frombuffer(raw, dtype="<f8", count=size, offset=pos).reshape(shape).copy()
            pos += 8 * size
    except struct.error as exc:
        raise CorruptionError(f"{path}: truncated checkpoint") from exc
    if pos != len(raw):
        raise CorruptionError(f"{path}: {len(raw) - pos} trailing bytes")
    return state


__all__ = [
    "MLP",
    "AttentionBlock",
    "AdamW",
    "Module",
    "attention_block",
    "block_diagonal_mask",
    "concat",
    "dispersion_loss",
    "forward_mlp",
    "load_checkpoint",
    "save_checkpoint",
]
