"""Small building blocks shared by the text encoder, image encoder and decoder."""

from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .attention import MultiHeadAttentionParams, mha
from .tensor import Parameter, Tensor

MASKED = -1e30


class Module:
    """Parameter container; attributes are walked in definition order."""

    def named_parameters(self, prefix: str = ""):
        for name, value in vars(self).items():
            yield from _walk(value, f"{prefix}{name}")

    def parameters(self) -> list:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> dict:
        return {name: p.data for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict):
        own = dict(self.named_parameters())
        missing = set(own) - set(state)
        extra = set(state) - set(own)
        if missing or extra:
            raise KeyError(f"state mismatch: missing={sorted(missing)[:5]} unexpected={sorted(extra)[:5]}")
        for name, p in own.items():
            p.assign(state[name])

    def freeze(self):
        for p in self.parameters():
            p.requires_grad = False


def _walk(value, path):
    if isinstance(value, Parameter):
        yield path, value
    elif isinstance(value, Module):
        yield from value.named_parameters(path + ".")
    elif isinstance(value, MultiHeadAttentionParams):
        for key in ("W_Q", "W_K", "W_V", "W_O"):
            yield f"{path}.{key}", getattr(value, key)
    elif isinstance(value, (list, tuple)):
        for i, item in enumerate(value):
            yield from _walk(item, f"{path}.{i}")


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, std: float | None = None):
        std = 1.0 / math.sqrt(d_in) if std is None else std
        self.W = Parameter(rng.normal(0.0, std, (d_in, d_out)))
        self.b = Parameter(np.zeros(d_out))

    def __call__(self, x: Tensor) -> Tensor:
        return T.add(T.matmul(x, self.W), T.repeat_rows(self.b, x.shape[0]))


class FeedForward(Module):
    def __init__(self, d: int, hidden: int, rng: np.random.Generator):
        self.inner = Linear(d, hidden, rng)
        self.outer = Linear(hidden, d, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.outer(T.relu(self.inner(x)))


class SelfAttentionBlock(Module):
    """Pre-norm block: x + attn(LN x); then x + ffn(LN x)."""

    def __init__(self, d: int, n_heads: int, rng: np.random.Generator, ffn_mult: int = 2):
        self.attn = MultiHeadAttentionParams.init(d, n_heads, rng)
        self.ffn = FeedForward(d, ffn_mult * d, rng)

    def __call__(self, x: Tensor, bias: np.ndarray | None = None) -> Tensor:
        h = T.layer_norm(x)
        x = T.add(x, mha(h, h, self.attn, bias=bias))
        return T.add(x, self.ffn(T.layer_norm(x)))


def causal_bias(t: int) -> np.ndarray:
    """t x t additive mask: position i sees positions <= i."""
    return np.triu(np.full((t, t), MASKED), k=1)
