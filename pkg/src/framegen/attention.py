"""Multi-head scaled dot-product attention and the two cross-frame variants.

Token tensors are laid out ``[frames, tokens_per_frame, dim]``. In the
spatial variant every frame queries the concatenated tokens of the first and
last frame. In the temporal variant each token queries the tokens at the same
position in the previous and next frame, with indices clamped to the clip.
"""
from __future__ import annotations

import math

import torch
import torch.nn as nn

from .nncore import ShapeError, kaiming_init_, softmax, zero_module


class AttentionParams(nn.Module):
    def __init__(
        self,
        dim: int,
        heads: int = 2,
        head_dim: int | None = None,
        kv_dim: int | None = None,
        zero_out: bool = False,
    ):
        super().__init__()
        head_dim = head_dim or dim // heads
        if head_dim < 1:
            raise ValueError("head dimension must be >= 1")
        kv_dim = kv_dim or dim
        inner = heads * head_dim
        self.heads, self.d_k, self.dim = heads, head_dim, dim
        self.w_q = kaiming_init_(nn.Linear(dim, inner, bias=False))
        self.w_k = kaiming_init_(nn.Linear(kv_dim, inner, bias=False))
        self.w_v = kaiming_init_(nn.Linear(kv_dim, inner, bias=False))
        self.w_o = nn.Linear(inner, dim)
        if zero_out:
            zero_module(self.w_o)
        else:
            kaiming_init_(self.w_o)


def attention_weights(q: torch.Tensor, k: torch.Tensor, p: AttentionParams) -> torch.Tensor:
    """Per-head weights ``[..., heads, Lq, Lk]``."""
    Q = _split(p.w_q(q), p.heads)
    K = _split(p.w_k(k), p.heads)
    return softmax(Q @ K.transpose(-1, -2) / math.sqrt(p.d_k), axis=-1)


def _split(x: torch.Tensor, heads: int) -> torch.Tensor:
    *lead, L, D = x.shape
    return x.reshape(*lead, L, heads, D // heads).transpose(-3, -2)


def _merge(x: torch.Tensor) -> torch.Tensor:
    *lead, h, L, d = x.shape
    return x.transpose(-3, -2).reshape(*lead, L, h * d)


def attend(q: torch.Tensor, k: torch.Tensor, v: torch.Tensor, p: AttentionParams) -> torch.Tensor:
    """softmax(Q K^T / sqrt(d_k)) V per head, heads concatenated, then W_O."""
    if k.shape[-2] != v.shape[-2]:
        raise ShapeError("attend", f"K has {k.shape[-2]} tokens but V has {v.shape[-2]}")
    if q.shape[-1] != p.w_q.in_features or k.shape[-1] != p.w_k.in_features or v.shape[-1] != p.w_v.in_features:
        raise ShapeError(
            "attend",
            f"dims q={q.shape[-1]} k={k.shape[-1]} v={v.shape[-1]} do not match the projections",
        )
    w = attention_weights(q, k, p)
    V = _split(p.w_v(v), p.heads)
    return p.w_o(_merge(w @ V))


def keyframe_tokens(x: torch.Tensor) -> torch.Tensor:
    """K/V source for the spatial variant: first and last frame tokens, ``[2L, D]``."""
    return torch.cat([x[0], x[-1]], dim=0)


def cross_frame_spatial(x: torch.Tensor, p: AttentionParams) -> torch.Tensor:
    if x.ndim != 3:
        raise ShapeError("cross_frame_spatial", f"expected [N, L, D], got {tuple(x.shape)}")
    n = x.shape[0]
    if n < 2:
        raise ValueError("cross-frame spatial attention needs at least 2 frames")
    kv = keyframe_tokens(x).unsqueeze(0).expand(n, -1, -1)
    return attend(x, kv, kv, p)


def neighbour_indices(n: int) -> tuple[torch.Tensor, torch.Tensor]:
    i = torch.arange(n)
    return (i - 1).clamp(0, n - 1), (i + 1).clamp(0, n - 1)


def neighbour_tokens(x: torch.Tensor) -> torch.Tensor:
    """K/V source for the temporal variant: ``[N, L, 2, D]`` from frames clamp(i-1), clamp(i+1)."""
    prev, nxt = neighbour_indices(x.shape[0])
    return torch.stack([x[prev], x[nxt]], dim=2)


def cross_frame_temporal(x: torch.Tensor, p: AttentionParams) -> torch.Tensor:
    if x.ndim != 3:
        raise ShapeError("cross_frame_temporal", f"expected [N, L, D], got {tuple(x.shape)}")
    kv = neighbour_tokens(x)
    out = attend(x.unsqueeze(2), kv, kv, p)  # one query token per (frame, position)
    return out.squeeze(2)


def self_attend(x: torch.Tensor, p: AttentionParams) -> torch.Tensor:
    return attend(x, x, x, p)
