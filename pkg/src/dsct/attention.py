"""Patch attention blocks.

Features are carved into non-overlapping PxP patches and flattened to token
grids of shape (patches, P*P, C).  Two attentions operate inside each patch:
one across channels (a CxC map built from projections of the pixel axis) and
one across pixel positions (multi-head, no positional encoding).  A third
block fuses three consecutive frames through convolution plus patch
self-attention.
"""

from __future__ import annotations

import math

import numpy as np

from . import functional as F
from .errors import ConfigError, ShapeError
from .layers import Conv2d, LayerNorm, Linear, Mlp, Module
from .tensor import Tensor, concat, matmul, relu, scale, transpose


def patch_partition(x: Tensor, p: int) -> Tensor:
    """(N, C, H, W) -> (N*H*W/p^2, p*p, C) token grids.

    Patches are laid out row-major over the image, pixels row-major inside
    each patch, so :func:`patch_merge` is an exact inverse.
    """
    if x.ndim != 4:
        raise ShapeError(f"patch_partition: expected NCHW, got {x.shape}")
    n, c, h, w = x.shape
    if h % p or w % p:
        raise ShapeError(f"patch_partition: {h}x{w} not divisible by patch {p}")
    t = x.reshape(n, c, h // p, p, w // p, p)
    t = t.transpose(0, 2, 4, 3, 5, 1)
    return t.reshape(n * (h // p) * (w // p), p * p, c)


def patch_merge(tokens: Tensor, p: int, n: int, h: int, w: int) -> Tensor:
    """Inverse of :func:`patch_partition` back to (N, C, H, W)."""
    c = tokens.shape[-1]
    t = tokens.reshape(n, h // p, w // p, p, p, c)
    t = t.transpose(0, 5, 1, 3, 2, 4)
    return t.reshape(n, c, h, w)


class ChannelSelfAttention(Module):
    """Attention across channels within each patch.

    Tokens are viewed as (patches, C, P^2); queries, keys, and values are
    projections of the pixel axis, so the (C, C) attention map is built from
    how channels express themselves over patch pixels.  Because the
    projections act along the pixel axis, permuting input channels permutes
    the output channels identically.
    """

    def __init__(self, p: int, d_k: int, rng: np.random.Generator,
                 dtype=np.float32):
        if d_k != p * p:
            raise ConfigError(
                f"channel attention head size {d_k} must equal patch area {p * p} "
                "so attended values fold back onto patch pixels"
            )
        self.wq = Linear(p * p, d_k, rng, dtype=dtype)
        # A key bias shifts every score in a row equally, which softmax
        # ignores; leaving it out avoids carrying a gradient-free parameter.
        self.wk = Linear(p * p, d_k, rng, dtype=dtype, bias=False)
        self.wv = Linear(p * p, d_k, rng, dtype=dtype)
        self.d_k = d_k

    def __call__(self, tokens: Tensor) -> Tensor:
        xt = transpose(tokens, (0, 2, 1))  # (n, C, P^2)
        q = self.wq(xt)
        k = self.wk(xt)
        v = self.wv(xt)
        scores = scale(matmul(q, transpose(k, (0, 2, 1))), 1.0 / math.sqrt(self.d_k))
        attn = F.softmax(scores, axis=-1)  # (n, C, C), rows sum to 1
        out = matmul(attn, v)
        return transpose(out, (0, 2, 1))


class MultiHeadSelfAttention(Module):
    """Standard multi-head attention over the token axis, no positions."""

    def __init__(self, dim: int, heads: int, rng: np.random.Generator,
                 dtype=np.float32):
        if dim % heads:
            raise ConfigError(f"dim {dim} not divisible by {heads} heads")
        self.wq = Linear(dim, dim, rng, dtype=dtype)
        self.wk = Linear(dim, dim, rng, dtype=dtype, bias=False)
        self.wv = Linear(dim, dim, rng, dtype=dtype)
        self.wo = Linear(dim, dim, rng, dtype=dtype)
        self.heads = heads
        self.dim = dim

    def _split_heads(self, x: Tensor) -> Tensor:
        n, t, _ = x.shape
        h = self.heads
        return transpose(x.reshape(n, t, h, self.dim // h), (0, 2, 1, 3))

    def __call__(self, tokens: Tensor) -> Tensor:
        n, t, _ = tokens.shape
        q = self._split_heads(self.wq(tokens))
        k = self._split_heads(self.wk(tokens))
        v = self._split_heads(self.wv(tokens))
        dh = self.dim // self.heads
        scores = scale(matmul(q, transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(dh))
        attn = F.softmax(scores, axis=-1)
        out = matmul(attn, v)  # (n, h, t, dh)
        out = transpose(out, (0, 2, 1, 3)).reshape(n, t, self.dim)
        return self.wo(out)


class SpatialChannelEncoder(Module):
    """Dual-branch attention block over PxP patches.

    One LayerNorm feeds both the channel branch and the spatial branch; their
    outputs are summed with the untouched input, then a second LayerNorm and
    an MLP refine the sum under another residual.  Zeroing the value/output
    projections and the MLP's second layer makes the block an exact identity.
    """

    def __init__(self, dim: int, p: int, heads: int, mlp_ratio: int,
                 rng: np.random.Generator, dtype=np.float32):
        self.p = p
        self.ln_attn = LayerNorm(dim, dtype=dtype)
        self.channel = ChannelSelfAttention(p, p * p, rng, dtype=dtype)
        self.spatial = MultiHeadSelfAttention(dim, heads, rng, dtype=dtype)
        self.ln_mlp = LayerNorm(dim, dtype=dtype)
        self.mlp = Mlp(dim, mlp_ratio, rng, dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        n, c, h, w = x.shape
        tokens = patch_partition(x, self.p)
        normed = self.ln_attn(tokens)
        mixed = self.channel(normed) + self.spatial(normed) + tokens
        out = self.mlp(self.ln_mlp(mixed)) + mixed
        return patch_merge(out, self.p, n, h, w)


class TemporalFusion(Module):
    """Fuse three aligned feature maps of the same scale into one.

    Concatenated frames pass through a 3x3 convolution down to C channels,
    then a patch transformer block (LayerNorm, spatial MSA, residual;
    LayerNorm, MLP, residual), a second 3x3 convolution, and a residual
    connection from the middle frame.  Zeroing the final convolution reduces
    the block to that residual.
    """

    def __init__(self, dim: int, p: int, heads: int, mlp_ratio: int,
                 rng: np.random.Generator, dtype=np.float32):
        self.p = p
        self.conv_in = Conv2d(3 * dim, dim, 3, rng, padding=1, dtype=dtype)
        self.ln_attn = LayerNorm(dim, dtype=dtype)
        self.msa = MultiHeadSelfAttention(dim, heads, rng, dtype=dtype)
        self.ln_mlp = LayerNorm(dim, dtype=dtype)
        self.mlp = Mlp(dim, mlp_ratio, rng, dtype=dtype)
        self.conv_out = Conv2d(dim, dim, 3, rng, padding=1, dtype=dtype)

    def __call__(self, prev: Tensor, cur: Tensor, nxt: Tensor) -> Tensor:
        if prev.shape != cur.shape or nxt.shape != cur.shape:
            raise ShapeError("temporal fusion: frame features must share a shape")
        n, c, h, w = cur.shape
        fused = self.conv_in(concat([prev, cur, nxt], axis=1))
        tokens = patch_partition(fused, self.p)
        tokens = self.msa(self.ln_attn(tokens)) + tokens
        tokens = self.mlp(self.ln_mlp(tokens)) + tokens
        out = self.conv_out(patch_merge(tokens, self.p, n, h, w))
        return out + cur


class MeanFusion(Module):
    """Parameter-free baseline: average the three frame features."""

    def __call__(self, prev: Tensor, cur: Tensor, nxt: Tensor) -> Tensor:
        return scale(prev + cur + nxt, 1.0 / 3.0)


class ConvFusion(Module):
    """Convolutional baseline: concatenate and mix with one 3x3 conv."""

    def __init__(self, dim: int, rng: np.random.Generator, dtype=np.float32):
        self.conv = Conv2d(3 * dim, dim, 3, rng, padding=1, dtype=dtype)

    def __call__(self, prev: Tensor, cur: Tensor, nxt: Tensor) -> Tensor:
        return self.conv(concat([prev, cur, nxt], axis=1))


def build_fusion(mode: str, dim: int, p: int, heads: int, mlp_ratio: int,
                 rng: np.random.Generator, dtype=np.float32) -> Module:
    if mode == "tfam":
        return TemporalFusion(dim, p, heads, mlp_ratio, rng, dtype=dtype)
    if mode == "mean":
        return MeanFusion()
    if mode == "conv":
        return ConvFusion(dim, rng, dtype=dtype)
    raise ConfigError(f"unknown aggregation mode {mode!r}")
