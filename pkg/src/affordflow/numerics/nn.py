"""Minimal layer library on top of the autograd tape."""

from __future__ import annotations

import math

import numpy as np

from . import autograd as ag
from .autograd import Tensor


class Module:
    def named_parameters(self, prefix: str = ""):
        for key, val in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(val, Tensor) and val.requires_grad:
                yield name, val
            elif isinstance(val, Module):
                yield from val.named_parameters(name + ".")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")

    def parameters(self) -> dict[str, Tensor]:
        return dict(self.named_parameters())

    def num_parameters(self) -> int:
        return sum(p.data.size for p in self.parameters().values())


def param(data) -> Tensor:
    return Tensor(data, requires_grad=True)


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, bias: bool = True,
                 scale: float = 1.0):
        self.weight = param(rng.normal(0.0, scale / math.sqrt(n_in), size=(n_in, n_out)))
        self.bias = param(np.zeros(n_out)) if bias else None

    def __call__(self, x):
        y = ag.matmul(x, self.weight)
        return y if self.bias is None else y + self.bias


class LayerNorm(Module):
    def __init__(self, d: int):
        self.gain = param(np.ones(d))
        self.shift = param(np.zeros(d))

    def __call__(self, x):
        return ag.layer_norm(x, axis=-1) * self.gain + self.shift


class Embedding(Module):
    def __init__(self, n: int, d: int, rng: np.random.Generator, scale: float = 0.02):
        self.table = param(rng.normal(0.0, scale, size=(n, d)))

    def __call__(self, index):
        return ag.take_rows(self.table, np.asarray(index))


class MLP(Module):
    """Stack of Linear layers with an activation between them (none after the last)."""

    def __init__(self, widths: list[int], rng: np.random.Generator, activation: str = "gelu"):
        self.layers = [Linear(a, b, rng) for a, b in zip(widths[:-1], widths[1:])]
        self.activation = {"gelu": ag.gelu, "relu": ag.relu}[activation]

    def __call__(self, x):
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = self.activation(x)
        return x


class SelfAttention(Module):
    def __init__(self, d: int, heads: int, rng: np.random.Generator):
        if d % heads:
            raise ValueError(f"width {d} not divisible by {heads} heads")
        self.heads = heads
        self.qkv = Linear(d, 3 * d, rng)
        self.out = Linear(d, d, rng)

    def __call__(self, x):
        # x: (B, T, d)
        B, T, d = x.shape
        H = self.heads
        dh = d // H
        qkv = self.qkv(x).reshape(B, T, 3, H, dh).transpose(2, 0, 3, 1, 4)  # (3,B,H,T,dh)
        q, k, v = qkv[0], qkv[1], qkv[2]
        scores = ag.matmul(q, k.transpose(0, 1, 3, 2)) * (1.0 / math.sqrt(dh))
        attn = ag.softmax(scores, axis=-1)
        y = ag.matmul(attn, v).transpose(0, 2, 1, 3).reshape(B, T, d)
        return self.out(y)


class EncoderLayer(Module):
    """Pre-norm transformer encoder block."""

    def __init__(self, d: int, heads: int, ff_ratio: int, rng: np.random.Generator):
        self.ln1 = LayerNorm(d)
        self.attn = SelfAttention(d, heads, rng)
        self.ln2 = LayerNorm(d)
        self.ff = MLP([d, ff_ratio * d, d], rng)

    def __call__(self, x):
        x = x + self.attn(self.ln1(x))
        return x + self.ff(self.ln2(x))


def sinusoidal(values: np.ndarray, n_freq: int, base: float = 1.0) -> np.ndarray:
    """``[sin(2^f * base * v), cos(2^f * base * v)]`` for f in 0..n_freq-1, per value.

    Output has a trailing axis of size ``2 * n_freq`` per input component.
    """
    v = np.asarray(values, dtype=np.float64)[..., None]
    freqs = base * (2.0 ** np.arange(n_freq))
    ang = v * freqs
    out = np.concatenate([np.sin(ang), np.cos(ang)], axis=-1)
    return out.reshape(*np.shape(values)[:-1], -1)


def timestep_embedding(k: np.ndarray, dim: int, max_period: float = 10000.0) -> np.ndarray:
    """Standard transformer sinusoid of integer diffusion steps, shape (..., dim)."""
    k = np.asarray(k, dtype=np.float64)
    half = dim // 2
    freqs = np.exp(-math.log(max_period) * np.arange(half) / half)
    ang = k[..., None] * freqs
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=-1)
