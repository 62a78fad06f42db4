"""Unidirectional SSM encoder with an autoregressive cross-attention decoder.

Token order is row-major over the patch grid.  The encoder feature at
position j depends on tokens 0..j; decoder query k reads encoder features at
positions < k only, so the pixel prediction for token k never sees token k
or anything after it.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from roma.errors import ShapeError
from roma.model.attention import causal_cross_attention, init_attention
from roma.model.config import ModelConfig
from roma.model.ssm import init_mamba_block, mamba_block, mlp_residual
from roma.numerics import (
    ParamRegistry, Tensor, add, add_row, concat, gelu, layer_norm, linear, matmul, outer_rows, reshape,
    rowmix, slice_axis,
)
from roma.vision.ares import RotationRecord
from roma.vision.image import patchify_batch


def cluster_members(config: ModelConfig) -> list[list[int]]:
    """Token indices of each cluster, clusters in block-raster order."""
    g, m = config.grid_side, config.s_mult
    out = []
    for bi in range(g // m):
        for bj in range(g // m):
            out.append([(bi * m + i) * g + (bj * m + j) for i in range(m) for j in range(m)])
    return out


def cluster_context_matrix(config: ModelConfig) -> np.ndarray:
    """Pooling weights ``(N-1, K)`` producing the context of clusters 2..N.

    The context of cluster n averages the decoder features of the tokens of
    cluster n-1 that precede the first token of cluster n in raster order.
    Those features only depend on pixels of clusters before n, so cluster
    predictions are causal in block-raster order as well.
    """
    members = cluster_members(config)
    w = np.zeros((len(members) - 1, config.n_tokens))
    for n in range(1, len(members)):
        first = min(members[n])
        prev = [t for t in members[n - 1] if t < first]
        w[n - 1, prev] = 1.0 / len(prev)
    return w


def cluster_blocks(images: np.ndarray, config: ModelConfig) -> np.ndarray:
    """``(B, H, W, C)`` -> ``(B, N, s*s*C)`` pixel blocks in block-raster order."""
    return patchify_batch(images, config.cluster_side)


@dataclass
class ForwardOutput:
    token_preds: Tensor          # (B, K-1, p*p*C) for tokens 2..K
    cluster_preds: Tensor        # (B, N-1, s*s*C) for clusters 2..N
    features: Tensor             # (B, K, d) encoder output
    layer_feats: list


class RoMANetwork:
    """Parameters and forward computation for one architecture variant."""

    def __init__(self, config: ModelConfig, seed: int = 0, causal: bool = True):
        self.config = config
        self.causal = causal
        self.params = ParamRegistry()
        self._init_params(np.random.default_rng(seed))
        self._pool = cluster_context_matrix(config) if config.n_clusters > 1 else None

    # -- parameters ----------------------------------------------------------
    def _init_params(self, rng: np.random.Generator) -> None:
        c, P = self.config, self.params
        d, K = c.width, c.n_tokens
        P.add("embed.w", rng.normal(0.0, 1.0 / math.sqrt(c.patch_dim), (c.patch_dim, d)))
        P.add("embed.b", np.zeros(d))
        P.add("embed.pos", rng.normal(0.0, 0.02, (K, d)))
        P.add("angle.w", rng.normal(0.0, 0.02, (2, d)))
        for i in range(c.depth):
            init_mamba_block(P, f"enc.{i:02d}", d, c.inner, c.state_dim, c.mlp_ratio, rng)
        P.add("enc.norm.g", np.ones(d))
        P.add("enc.norm.b", np.zeros(d))
        P.add("dec.queries", rng.normal(0.0, 0.02, (K, d)))
        for i in range(c.decoder_depth):
            pre = f"dec.{i:02d}"
            P.add(f"{pre}.norm.g", np.ones(d))
            P.add(f"{pre}.norm.b", np.zeros(d))
            init_attention(P, f"{pre}.attn", d, rng, out_proj=False)
            P.add(f"{pre}.mlp_norm.g", np.ones(d))
            P.add(f"{pre}.mlp_norm.b", np.zeros(d))
            P.add(f"{pre}.mlp.w1", rng.normal(0.0, 1.0 / math.sqrt(d), (d, c.mlp_ratio * d)))
            P.add(f"{pre}.mlp.b1", np.zeros(c.mlp_ratio * d))
            P.add(f"{pre}.mlp.w2", rng.normal(0.0, 0.02, (c.mlp_ratio * d, d)))
            P.add(f"{pre}.mlp.b2", np.zeros(d))
        P.add("dec.norm.g", np.ones(d))
        P.add("dec.norm.b", np.zeros(d))
        P.add("head.pixel.w", rng.normal(0.0, 0.02, (d, c.patch_dim)))
        P.add("head.pixel.b", np.zeros(c.patch_dim))
        ctx, hidden = c.decoder_depth * d, 2 * d
        P.add("head.cluster.w1", rng.normal(0.0, 1.0 / math.sqrt(ctx), (ctx, hidden)))
        P.add("head.cluster.b1", np.zeros(hidden))
        P.add("head.cluster.w2", rng.normal(0.0, 0.02, (hidden, c.cluster_dim)))
        P.add("head.cluster.b2", np.zeros(c.cluster_dim))

    @property
    def encoder_blocks(self) -> list[str]:
        return [f"enc.{i:02d}" for i in range(self.config.depth)]

    @property
    def decoder_blocks(self) -> list[str]:
        return [f"dec.{i:02d}" for i in range(self.config.decoder_depth)]

    # -- stages ----------------------------------------------------------------
    def patch_embed(self, patches) -> Tensor:
        """Linear patch projection plus a learnable embedding per token index."""
        c = self.config
        x = patches if isinstance(patches, Tensor) else Tensor(patches)
        if x.ndim != 3 or x.shape[1:] != (c.n_tokens, c.patch_dim):
            raise ShapeError(f"patch_embed: expected (B, {c.n_tokens}, {c.patch_dim}) patches, got {x.shape}")
        b, k, _ = x.shape
        tok = linear(x, self.params["embed.w"], self.params["embed.b"])
        tok = add_row(reshape(tok, (b, k * c.width)), reshape(self.params["embed.pos"], (k * c.width,)))
        return reshape(tok, (b, k, c.width))

    def angle_embedding(self, tokens: Tensor, records: Sequence[Optional[RotationRecord]]) -> Tensor:
        """Add ``W [cos t, sin t]`` to every token covered by the rotated crop."""
        b, k, _ = tokens.shape
        if len(records) != b:
            raise ShapeError(f"angle_embedding: {len(records)} records for a batch of {b}")
        if not any(r is not None and r.applied for r in records):
            return tokens
        angles = np.zeros((b, 2))
        mask = np.zeros((b, k))
        for i, r in enumerate(records):
            if r is not None and r.applied:
                angles[i] = (math.cos(r.theta), math.sin(r.theta))
                mask[i] = r.covered_mask(k)
        shared = matmul(Tensor(angles), self.params["angle.w"])
        return add(tokens, outer_rows(mask, shared))

    def encoder_forward(self, tokens: Tensor) -> Tensor:
        x = tokens
        for prefix in self.encoder_blocks:
            x = mamba_block(x, self.params, prefix)
        return layer_norm(x, self.params["enc.norm.g"], self.params["enc.norm.b"])

    def decoder_forward(self, features: Tensor) -> tuple[Tensor, list]:
        c, P = self.config, self.params
        b, k, d = features.shape
        q = add_row(Tensor(np.zeros((b, k * d))), reshape(P["dec.queries"], (k * d,)))
        q = reshape(q, (b, k, d))
        layer_feats = []
        for prefix in self.decoder_blocks:
            h = layer_norm(q, P[f"{prefix}.norm.g"], P[f"{prefix}.norm.b"])
            q = add(q, causal_cross_attention(h, features, P, f"{prefix}.attn", c.heads, self.causal))
            q = mlp_residual(q, P, prefix)
            layer_feats.append(q)
        out = layer_norm(q, P["dec.norm.g"], P["dec.norm.b"])
        preds = linear(slice_axis(out, 1, 1, k), P["head.pixel.w"], P["head.pixel.b"])
        return preds, layer_feats

    def cluster_aggregate(self, layer_feats: list) -> Tensor:
        """Per-token concatenation across decoder layers, pooled into cluster contexts."""
        if self._pool is None:
            raise ShapeError("cluster_aggregate: a single cluster leaves nothing to predict")
        return rowmix(self._pool, concat(layer_feats, axis=-1))

    def cluster_head(self, context: Tensor) -> Tensor:
        P = self.params
        h = gelu(linear(context, P["head.cluster.w1"], P["head.cluster.b1"]))
        return linear(h, P["head.cluster.w2"], P["head.cluster.b2"])

    # -- full pass -------------------------------------------------------------
    def encode(self, images: np.ndarray, records: Optional[Sequence[Optional[RotationRecord]]] = None) -> Tensor:
        images = np.asarray(images, dtype=np.float64)
        if images.ndim == 3:
            images = images[None]
        tokens = self.patch_embed(patchify_batch(images, self.config.patch_size))
        if records is not None:
            tokens = self.angle_embedding(tokens, records)
        return self.encoder_forward(tokens)

    def forward(self, images: np.ndarray, records: Optional[Sequence[Optional[RotationRecord]]] = None,
                with_clusters: bool = True) -> ForwardOutput:
        features = self.encode(images, records)
        token_preds, layer_feats = self.decoder_forward(features)
        cluster_preds = None
        if with_clusters and self._pool is not None:
            cluster_preds = self.cluster_head(self.cluster_aggregate(layer_feats))
        return ForwardOutput(token_preds, cluster_preds, features, layer_feats)
