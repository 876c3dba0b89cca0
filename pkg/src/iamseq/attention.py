"""Scaled dot-product, dynamically scaled, and integrated (residual) attention.

Queries, keys and values are all the input itself; there are no learned
projections.  The only trainable quantity is the scalar sharpness ``lam``
that multiplies the pre-softmax scores.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import DimensionError
from .tensor import Tensor


class AttentionAxis(enum.Enum):
    """Which axis of a ``(batch, L, F)`` input plays the token role."""

    TIME = "time"  # L tokens, each an F-wide embedding
    FEATURE = "feature"  # F tokens, each an L-long embedding


@dataclass
class AttentionOutput:
    attended: Tensor
    weights: Tensor


def _check_qkv(q: Tensor, k: Tensor, v: Tensor) -> None:
    if q.ndim != 3 or q.shape != k.shape or q.shape != v.shape:
        raise DimensionError(f"attention needs equal (B, T, D) q/k/v, got {q.shape}, {k.shape}, {v.shape}")
    if q.shape[-1] < 1:
        raise DimensionError("attention embedding width must be at least 1")


def _attend(q, k, v, lam) -> AttentionOutput:
    q, k, v = T.as_tensor(q), T.as_tensor(k), T.as_tensor(v)
    _check_qkv(q, k, v)
    scores = T.scale(T.matmul(q, T.transpose_last_two(k)), 1.0 / math.sqrt(q.shape[-1]))
    if lam is not None:
        scores = T.mul(scores, lam)
    weights = T.softmax(scores, axis=-1)
    return AttentionOutput(T.matmul(weights, v), weights)


def scaled_dot_attention(q, k, v) -> AttentionOutput:
    """``softmax(q k^T / sqrt(D)) v`` over the last two axes."""
    return _attend(q, k, v, None)


def dynamic_attention(q, k, v, lam) -> AttentionOutput:
    """Scaled dot-product attention with scores multiplied by ``lam`` before the softmax."""
    lam = T.as_tensor(lam)
    if lam.size != 1:
        raise DimensionError(f"dynamic scale must be a scalar, got shape {lam.shape}")
    return _attend(q, k, v, lam)


def iam_forward(x, axis: AttentionAxis, lam) -> tuple[Tensor, Tensor]:
    """Residual dynamic self-attention: ``y = x + attend(x, x, x)``.

    For ``AttentionAxis.FEATURE`` the token view is ``x`` transposed to
    ``(batch, F, L)``; the result is transposed back so ``y`` keeps x's shape.
    """
    x = T.as_tensor(x)
    if x.ndim != 3:
        raise DimensionError(f"integrated attention expects (batch, L, F), got {x.shape}")
    tokens = T.transpose_last_two(x) if axis is AttentionAxis.FEATURE else x
    out = dynamic_attention(tokens, tokens, tokens, lam)
    y = T.add(tokens, out.attended)
    if axis is AttentionAxis.FEATURE:
        y = T.transpose_last_two(y)
    return y, out.weights


class IntegratedAttention:
    """Holds the learnable sharpness for one attention site."""

    def __init__(self, axis: AttentionAxis, lam: Tensor | None = None):
        self.axis = axis
        self.lam = lam if lam is not None else Tensor(1.0, requires_grad=True)

    def __call__(self, x) -> tuple[Tensor, Tensor]:
        return iam_forward(x, self.axis, self.lam)


def importance_profile(weights) -> np.ndarray:
    """Attention received by each token, averaged over batch and query rows."""
    w = weights.data if isinstance(weights, Tensor) else np.asarray(weights, dtype=np.float64)
    if w.ndim != 3 or w.shape[1] != w.shape[2]:
        raise DimensionError(f"importance_profile expects (batch, T, T) weights, got {w.shape}")
    return w.mean(axis=(0, 1))
