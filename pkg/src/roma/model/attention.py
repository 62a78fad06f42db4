"""Multi-head attention: causal cross-attention for the decoder and full
self-attention for the quadratic reference encoder."""
from __future__ import annotations

import math
from typing import Optional

import numpy as np

from roma.numerics import ParamRegistry, Tensor, add, layer_norm, linear, matmul, reshape, scale, slice_axis, softmax_rows, transpose
from roma.model.ssm import mlp_residual


def strict_past_mask(k: int) -> np.ndarray:
    """``mask[i, j]`` is True iff query ``i`` may read key ``j`` (``j < i``)."""
    return np.tril(np.ones((k, k), dtype=bool), -1)


def init_attention(params: ParamRegistry, prefix: str, width: int, rng: np.random.Generator,
                   out_proj: bool = True, zero_out: bool = False) -> None:
    """Fused ``(d, 3d)`` query/key/value weight, columns ``[q | k | v]``."""
    std = 1.0 / math.sqrt(width)
    params.add(f"{prefix}.in.w", rng.normal(0.0, std, (width, 3 * width)))
    if out_proj:
        params.add(f"{prefix}.o.w", np.zeros((width, width)) if zero_out else rng.normal(0.0, std, (width, width)))
        params.add(f"{prefix}.o.b", np.zeros(width))


def _split_heads(x: Tensor, heads: int) -> Tensor:
    b, k, d = x.shape
    x = transpose(reshape(x, (b, k, heads, d // heads)), (0, 2, 1, 3))
    return reshape(x, (b * heads, k, d // heads))


def _merge_heads(x: Tensor, batch: int, heads: int) -> Tensor:
    _, k, dh = x.shape
    x = transpose(reshape(x, (batch, heads, k, dh)), (0, 2, 1, 3))
    return reshape(x, (batch, k, heads * dh))


def multihead_attention(queries: Tensor, keys_from: Tensor, params: ParamRegistry, prefix: str, heads: int,
                        mask: Optional[np.ndarray]) -> Tensor:
    """Attention of ``queries`` over ``keys_from``; ``mask[i, j]`` allows query i to read j.

    Queries with no allowed key produce a zero context.  The output
    projection is applied only when the block was built with one.
    """
    b, k, d = queries.shape
    w = params[f"{prefix}.in.w"]
    q = _split_heads(linear(queries, slice_axis(w, 1, 0, d)), heads)
    kv = linear(keys_from, slice_axis(w, 1, d, 3 * d))
    kk = _split_heads(slice_axis(kv, -1, 0, d), heads)
    v = _split_heads(slice_axis(kv, -1, d, 2 * d), heads)
    logits = scale(matmul(q, transpose(kk, (0, 2, 1))), 1.0 / math.sqrt(d // heads))
    weights = softmax_rows(logits, mask)
    ctx = _merge_heads(matmul(weights, v), b, heads)
    if f"{prefix}.o.w" not in params:
        return ctx
    return linear(ctx, params[f"{prefix}.o.w"], params[f"{prefix}.o.b"])


def causal_cross_attention(queries: Tensor, features: Tensor, params: ParamRegistry, prefix: str, heads: int,
                           causal: bool = True) -> Tensor:
    mask = strict_past_mask(queries.shape[1]) if causal else None
    return multihead_attention(queries, features, params, prefix, heads, mask)


def init_attention_block(params: ParamRegistry, prefix: str, width: int, mlp_ratio: int,
                         rng: np.random.Generator) -> None:
    params.add(f"{prefix}.norm.g", np.ones(width))
    params.add(f"{prefix}.norm.b", np.zeros(width))
    init_attention(params, f"{prefix}.attn", width, rng, zero_out=True)
    params.add(f"{prefix}.mlp_norm.g", np.ones(width))
    params.add(f"{prefix}.mlp_norm.b", np.zeros(width))
    params.add(f"{prefix}.mlp.w1", rng.normal(0.0, 1.0 / math.sqrt(width), (width, mlp_ratio * width)))
    params.add(f"{prefix}.mlp.b1", np.zeros(mlp_ratio * width))
    params.add(f"{prefix}.mlp.w2", np.zeros((mlp_ratio * width, width)))
    params.add(f"{prefix}.mlp.b2", np.zeros(width))


def self_attention_block(x: Tensor, params: ParamRegistry, prefix: str, heads: int) -> Tensor:
    """The SSM block layout with the mixer swapped for full self-attention."""
    h = layer_norm(x, params[f"{prefix}.norm.g"], params[f"{prefix}.norm.b"])
    x = add(x, multihead_attention(h, h, params, f"{prefix}.attn", heads, None))
    return mlp_residual(x, params, prefix)
