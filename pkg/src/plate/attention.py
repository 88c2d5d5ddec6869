"""Masked multi-head self-attention and pre-norm transformer blocks."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import numcore as nc
from .layers import LayerNorm, Linear, Module

CAUSAL = "causal"
FULL = "full"


@dataclass(frozen=True)
class AttentionConfig:
    """Shape of one transformer stack.

    ``future_n`` is only meaningful (and required) for full attention; it
    sets how many future steps the output heads are trained to predict.
    """

    d_model: int = 32
    heads: int = 4
    layers: int = 2
    attention_kind: str = CAUSAL
    future_n: int | None = None
    dropout: float = 0.1

    def __post_init__(self):
        if self.d_model < 1 or self.heads < 1 or self.layers < 1:
            raise ValueError("d_model, heads and layers must be positive")
        if self.d_model % self.heads:
            raise ValueError(f"d_model={self.d_model} is not divisible by heads={self.heads}")
        if self.attention_kind not in (CAUSAL, FULL):
            raise ValueError(f"unknown attention_kind {self.attention_kind!r}")
        if self.attention_kind == FULL:
            if self.future_n not in (1, 2, 3):
                raise ValueError("full attention needs future_n in {1, 2, 3}")
        elif self.future_n is not None:
            raise ValueError("future_n is only valid with full attention")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")

    @property
    def n_future_heads(self):
        return self.future_n if self.attention_kind == FULL else 1

    def to_dict(self):
        return asdict(self)


def build_mask(kind, T):
    """Additive attention mask: 0 where attending is allowed, -inf elsewhere."""
    if T < 1:
        raise ValueError("mask length must be at least 1")
    if kind == CAUSAL:
        return np.triu(np.full((T, T), -np.inf), k=1)
    if kind == FULL:
        return np.zeros((T, T))
    raise ValueError(f"unknown mask kind {kind!r}")


def scaled_dot_attention(Q, K, V, M):
    """``softmax((Q K^T + M) / sqrt(D)) V`` over the trailing two axes.

    Leading axes (batch, heads) are carried through unchanged.
    """
    Q, K, V = nc.as_tensor(Q), nc.as_tensor(K), nc.as_tensor(V)
    D = Q.shape[-1]
    if D == 0 or K.shape[-1] != D or K.shape[-2] != V.shape[-2]:
        raise nc.ShapeError(f"attention shapes Q{Q.shape} K{K.shape} V{V.shape}")
    M = np.asarray(M, dtype=nc.DTYPE)
    if np.isneginf(M).all(axis=-1).any():
        raise ValueError("mask has a row with no admissible position")
    nd = K.ndim
    axes = tuple(range(nd - 2)) + (nd - 1, nd - 2)
    scores = nc.add_mask(nc.matmul(Q, nc.transpose(K, axes)), M)
    weights = nc.softmax_rows(nc.scale(scores, 1.0 / math.sqrt(D)))
    return nc.matmul(weights, V)


def sinusoidal_positions(T, d):
    pos = np.arange(T)[:, None]
    i = np.arange(d)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / d)
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle))


class MultiHeadAttention(Module):
    def __init__(self, rng, d_model, heads):
        self.heads = heads
        self.qkv = Linear(rng, d_model, 3 * d_model)
        self.out = Linear(rng, d_model, d_model)

    def __call__(self, x, mask):
        # x: (B, T, d)
        B, T, d = x.shape
        h, dh = self.heads, d // self.heads
        qkv = nc.reshape(self.qkv(x), (B, T, 3, h, dh))
        qkv = nc.transpose(qkv, (2, 0, 3, 1, 4))  # (3, B, h, T, dh)
        q, k, v = (nc.take(qkv, i, axis=0) for i in range(3))
        ctx = scaled_dot_attention(q, k, v, mask)  # (B, h, T, dh)
        ctx = nc.reshape(nc.transpose(ctx, (0, 2, 1, 3)), (B, T, d))
        return self.out(ctx)


class FeedForward(Module):
    def __init__(self, rng, d_model, width):
        self.fc1 = Linear(rng, d_model, width)
        self.fc2 = Linear(rng, width, d_model)

    def __call__(self, x):
        return self.fc2(nc.relu(self.fc1(x)))


class Block(Module):
    """Pre-norm residual block: ``x + attn(ln(x))`` then ``x + ff(ln(x))``."""

    def __init__(self, rng, config: AttentionConfig):
        self.ln1 = LayerNorm(config.d_model)
        self.attn = MultiHeadAttention(rng, config.d_model, config.heads)
        self.ln2 = LayerNorm(config.d_model)
        self.ff = FeedForward(rng, config.d_model, 4 * config.d_model)
        self.dropout = config.dropout

    def __call__(self, x, mask, rng=None):
        x = nc.add(x, nc.dropout(self.attn(self.ln1(x), mask), self.dropout, rng))
        x = nc.add(x, nc.dropout(self.ff(self.ln2(x)), self.dropout, rng))
        return x


class TransformerStack(Module):
    """``layers`` blocks followed by a final layer norm."""

    def __init__(self, rng, config: AttentionConfig):
        self.config = config
        self.blocks = [Block(rng, config) for _ in range(config.layers)]
        self.ln_f = LayerNorm(config.d_model)

    def __call__(self, tokens, rng=None):
        """``tokens``: (B, T, d_model) already carrying positional information."""
        tokens = nc.as_tensor(tokens)
        if tokens.ndim != 3 or tokens.shape[-1] != self.config.d_model:
            raise nc.ShapeError(f"expected (B, T, {self.config.d_model}) tokens, got {tokens.shape}")
        if tokens.shape[1] < 1:
            raise nc.ShapeError("need at least one token")
        mask = build_mask(self.config.attention_kind, tokens.shape[1])
        x = tokens
        for block in self.blocks:
            x = block(x, mask, rng)
        return self.ln_f(x)


def block_forward(tokens, config: AttentionConfig, block=None, rng=None):
    """Run a single block on ``(T, d_model)`` or ``(B, T, d_model)`` tokens.

    A fresh block is initialised from ``rng`` (default seed 0) when none is
    given. The output has the input's shape.
    """
    tokens = nc.as_tensor(tokens)
    squeeze = tokens.ndim == 2
    if squeeze:
        tokens = nc.reshape(tokens, (1,) + tokens.shape)
    if tokens.ndim != 3 or tokens.shape[-1] != config.d_model:
        raise nc.ShapeError(f"token width {tokens.shape[-1]} != d_model {config.d_model}")
    if tokens.shape[1] < 1:
        raise nc.ShapeError("need at least one token")
    if block is None:
        block = Block(np.random.default_rng(0) if rng is None else rng, config)
    out = block(tokens, build_mask(config.attention_kind, tokens.shape[1]))
    return nc.reshape(out, out.shape[1:]) if squeeze else out
