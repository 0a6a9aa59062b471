"""Attention primitives: standard multi-head, top-down cross-scale, deformable."""

from __future__ import annotations

import math

import torch
import torch.nn as nn
import torch.nn.functional as F
from torch import Tensor


def split_heads(x: Tensor, heads: int) -> Tensor:
    """(B, N, D) -> (B, h, N, D/h)."""
    b, n, d = x.shape
    return x.view(b, n, heads, d // heads).transpose(1, 2)


def merge_heads(x: Tensor) -> Tensor:
    """(B, h, N, d) -> (B, N, h*d)."""
    b, h, n, d = x.shape
    return x.transpose(1, 2).reshape(b, n, h * d)


def attention_weights(q: Tensor, k: Tensor, key_scale: Tensor | None = None) -> Tensor:
    """Softmax attention rows for (B, h, Nq, d) queries against (B, h, Nk, d) keys.

    `key_scale`, if given, multiplies the logits column-wise (broadcast over
    queries) before the softmax.
    """
    logits = q @ k.transpose(-2, -1) / math.sqrt(q.shape[-1])
    if key_scale is not None:
        logits = logits * key_scale
    return F.softmax(logits, dim=-1)


class MultiHeadAttention(nn.Module):
    """Plain scaled-dot-product cross attention with an output projection."""

    def __init__(self, dim: int, heads: int, kv_dim: int | None = None):
        super().__init__()
        if dim % heads != 0:
            raise ValueError(f"dim {dim} not divisible by heads {heads}")
        kv_dim = dim if kv_dim is None else kv_dim
        self.heads = heads
        self.q_proj = nn.Linear(dim, dim)
        self.k_proj = nn.Linear(kv_dim, dim)
        self.v_proj = nn.Linear(kv_dim, dim)
        self.out_proj = nn.Linear(dim, dim)

    def forward(self, query: Tensor, key_value: Tensor) -> Tensor:
        q = split_heads(self.q_proj(query), self.heads)
        k = split_heads(self.k_proj(key_value), self.heads)
        v = split_heads(self.v_proj(key_value), self.heads)
        attn = attention_weights(q, k)
        return self.out_proj(merge_heads(attn @ v))


class TopDownAttention(nn.Module):
    """Residual cross-scale block: LayerNorm(x + MHA(q=x, kv=coarser))."""

    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.attn = MultiHeadAttention(dim, heads)
        self.norm = nn.LayerNorm(dim)

    def forward(self, x: Tensor, coarser: Tensor) -> Tensor:
        return self.norm(x + self.attn(x, coarser))


def sample_token_grid(feat: Tensor, pos: Tensor) -> Tensor:
    """Bilinearly sample per-query key/value slots from a token grid.

    feat: (B, h, d, g, g) feature maps; pos: (B, h, Nq, Nk, 2) sample
    positions as (x, y) in grid units. Returns (B, h, Nq, Nk, d).
    Positions are clamped to the grid; exact-integer positions reproduce
    the grid values.
    """
    b, h, d, g, _ = feat.shape
    x = pos[..., 0].clamp(0.0, g - 1.0)
    y = pos[..., 1].clamp(0.0, g - 1.0)
    x0 = x.floor()
    y0 = y.floor()
    fx = x - x0
    fy = y - y0
    x0 = x0.long()
    y0 = y0.long()
    x1 = (x0 + 1).clamp(max=g - 1)
    y1 = (y0 + 1).clamp(max=g - 1)

    flat = feat.reshape(b, h, d, g * g)

    def gather(iy: Tensor, ix: Tensor) -> Tensor:
        idx = (iy * g + ix).reshape(b, h, 1, -1).expand(b, h, d, -1)
        out = flat.gather(3, idx)
        return out.reshape(b, h, d, *pos.shape[2:4]).permute(0, 1, 3, 4, 2)

    w00 = ((1 - fx) * (1 - fy)).unsqueeze(-1)
    w10 = (fx * (1 - fy)).unsqueeze(-1)
    w01 = ((1 - fx) * fy).unsqueeze(-1)
    w11 = (fx * fy).unsqueeze(-1)
    return (
        gather(y0, x0) * w00
        + gather(y0, x1) * w10
        + gather(y1, x0) * w01
        + gather(y1, x1) * w11
    )


class DeformableAttention(nn.Module):
    """Self-attention whose keys/values are resampled at offset grid positions.

    A small head predicts one 2-D offset per token and head; scaled by
    `gamma`, the offset shifts the whole key grid seen by that query, and
    keys/values are bilinearly interpolated at the shifted positions
    (`offset_mode="spatial"`). The literal additive variant adds the tiled
    offset directly to the key features (`offset_mode="additive"`). With
    zero offsets both variants coincide with standard self-attention.
    """

    def __init__(
        self,
        dim: int,
        heads: int,
        gamma: float = 0.1,
        offset_hidden: int = 32,
        offset_mode: str = "spatial",
    ):
        super().__init__()
        if offset_mode not in ("spatial", "additive"):
            raise ValueError(f"unknown offset_mode {offset_mode!r}")
        if dim % heads != 0:
            raise ValueError(f"dim {dim} not divisible by heads {heads}")
        self.heads = heads
        self.gamma = gamma
        self.offset_mode = offset_mode
        self.q_proj = nn.Linear(dim, dim)
        self.k_proj = nn.Linear(dim, dim)
        self.v_proj = nn.Linear(dim, dim)
        self.out_proj = nn.Linear(dim, dim)
        self.offset_net = nn.Sequential(
            nn.Linear(dim, offset_hidden),
            nn.GELU(),
            nn.Linear(offset_hidden, heads * 2),
        )

    def predict_offsets(self, query: Tensor) -> Tensor:
        """(B, N, D) query features -> (B, N, h, 2) offsets."""
        b, n, _ = query.shape
        return self.offset_net(query).view(b, n, self.heads, 2)

    def forward(self, x: Tensor, key_scale: Tensor | None = None) -> Tensor:
        b, n, d = x.shape
        g = math.isqrt(n)
        if g * g != n:
            raise ValueError(f"token count {n} is not a square grid")
        q_full = self.q_proj(x)
        q = split_heads(q_full, self.heads)
        k = split_heads(self.k_proj(x), self.heads)
        v = split_heads(self.v_proj(x), self.heads)
        offsets = self.predict_offsets(q_full)
        shift = self.gamma * offsets

        scale = None
        if key_scale is not None:
            scale = key_scale[:, None, None, :]

        if self.gamma == 0.0 or not bool(shift.any()):
            attn = attention_weights(q, k, key_scale=scale)
            out = attn @ v
        elif self.offset_mode == "additive":
            tiled = shift.permute(0, 2, 1, 3).repeat(1, 1, 1, (d // self.heads + 1) // 2)
            attn = attention_weights(q, k + tiled[..., : d // self.heads], key_scale=scale)
            out = attn @ v
        else:
            out = self._spatial_attention(q, k, v, shift, g, scale)
        return self.out_proj(merge_heads(out))

    def _spatial_attention(
        self,
        q: Tensor,
        k: Tensor,
        v: Tensor,
        shift: Tensor,
        g: int,
        scale: Tensor | None,
    ) -> Tensor:
        b, h, n, d = q.shape
        ys, xs = torch.meshgrid(
            torch.arange(g, dtype=q.dtype, device=q.device),
            torch.arange(g, dtype=q.dtype, device=q.device),
            indexing="ij",
        )
        base = torch.stack([xs.reshape(-1), ys.reshape(-1)], dim=-1)  # (Nk, 2)
        # (B, h, Nq, Nk, 2): the whole key grid shifted once per query/head.
        pos = base.view(1, 1, 1, n, 2) + shift.permute(0, 2, 1, 3).unsqueeze(3)
        k_maps = k.transpose(-2, -1).reshape(b, h, d, g, g)
        v_maps = v.transpose(-2, -1).reshape(b, h, d, g, g)
        k_s = sample_token_grid(k_maps, pos)
        v_s = sample_token_grid(v_maps, pos)
        logits = (q.unsqueeze(3) * k_s).sum(-1) / math.sqrt(d)
        if scale is not None:
            logits = logits * scale
        attn = F.softmax(logits, dim=-1)
        return (attn.unsqueeze(-1) * v_s).sum(3)
