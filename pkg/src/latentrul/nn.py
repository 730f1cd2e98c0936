"""Attention-encoder building blocks on top of the autodiff tensors."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, concat, matmul, normalize_last_axis, relu, softmax, transpose_last2


def positional_encoding(seq_len: int, dim: int, one_based: bool = False) -> np.ndarray:
    """Sinusoidal position table, shape (seq_len, dim).

    Column 2j holds sin(pos / 10000^(2j/dim)), column 2j+1 the matching cosine.
    Positions count from 0 by default; ``one_based`` starts them at 1 instead.
    """
    if dim % 2 != 0:
        raise ValueError(f"positional encoding dimension must be even, got {dim}")
    if seq_len < 1:
        raise ValueError("seq_len must be >= 1")
    pos = np.arange(seq_len, dtype=np.float64) + (1.0 if one_based else 0.0)
    j = np.arange(dim // 2, dtype=np.float64)
    angles = pos[:, None] / np.power(10000.0, 2.0 * j / dim)[None, :]
    pe = np.empty((seq_len, dim), dtype=np.float64)
    pe[:, 0::2] = np.sin(angles)
    pe[:, 1::2] = np.cos(angles)
    return pe


def scaled_dot_attention(q: Tensor, k: Tensor, v: Tensor) -> Tensor:
    """softmax(q kᵀ / sqrt(d_k)) v, batched over any leading axes."""
    if q.shape[-1] != k.shape[-1]:
        raise ValueError(f"query/key dims differ: {q.shape[-1]} vs {k.shape[-1]}")
    if k.shape[-2] != v.shape[-2]:
        raise ValueError(f"key/value counts differ: {k.shape[-2]} vs {v.shape[-2]}")
    scale = 1.0 / math.sqrt(q.shape[-1])
    scores = matmul(q, transpose_last2(k)) * scale
    return matmul(softmax(scores), v)


@dataclass
class AttentionWeights:
    """Per-head projection matrices plus the output projection."""

    wq: list  # h tensors of shape (d, d_k)
    wk: list
    wv: list
    wo: Tensor  # (h * d_v, d)

    @property
    def n_heads(self) -> int:
        return len(self.wq)


def multi_head_attention(x: Tensor, weights: AttentionWeights) -> Tensor:
    """Self-attention with per-head projections, concatenated and projected by wo."""
    heads = []
    for wq, wk, wv in zip(weights.wq, weights.wk, weights.wv):
        heads.append(scaled_dot_attention(matmul(x, wq), matmul(x, wk), matmul(x, wv)))
    return matmul(concat(heads, axis=-1), weights.wo)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Standardize the last axis, then apply the learned affine."""
    return normalize_last_axis(x, eps) * gain + bias


def feed_forward(x: Tensor, w1: Tensor, b1: Tensor, w2: Tensor, b2: Tensor) -> Tensor:
    """Two-layer position-wise network: relu(x w1 + b1) w2 + b2."""
    return matmul(relu(matmul(x, w1) + b1), w2) + b2


def init_linear(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    """Uniform weights in [-1/sqrt(fan_in), 1/sqrt(fan_in)]."""
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))
