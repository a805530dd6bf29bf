"""Video U-Net building blocks shared by the base denoiser and its conditional copy.

Feature maps are ``[N, C, h, w]`` for one clip of N frames; the timestep
embedding is one vector per clip.
"""
from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from .attention import AttentionParams, attend, cross_frame_spatial, cross_frame_temporal, self_attend
from .fusion import from_tokens, to_tokens
from .nncore import groupnorm, kaiming_init_, sinusoid


def conv3x3(i: int, o: int, stride: int = 1) -> nn.Conv2d:
    return kaiming_init_(nn.Conv2d(i, o, 3, stride=stride, padding=1))


class ResBlock(nn.Module):
    def __init__(self, in_ch: int, out_ch: int, temb_dim: int):
        super().__init__()
        self.norm1 = groupnorm(in_ch)
        self.conv1 = conv3x3(in_ch, out_ch)
        self.temb = kaiming_init_(nn.Linear(temb_dim, out_ch))
        self.norm2 = groupnorm(out_ch)
        self.conv2 = conv3x3(out_ch, out_ch)
        self.skip = kaiming_init_(nn.Conv2d(in_ch, out_ch, 1)) if in_ch != out_ch else nn.Identity()

    def forward(self, x: torch.Tensor, temb: torch.Tensor) -> torch.Tensor:
        h = self.conv1(F.silu(self.norm1(x)))
        h = h + self.temb(F.silu(temb))[:, None, None]
        h = self.conv2(F.silu(self.norm2(h)))
        return self.skip(x) + h


class FeedForward(nn.Module):
    def __init__(self, dim: int, mult: int = 2):
        super().__init__()
        self.net = nn.Sequential(
            kaiming_init_(nn.Linear(dim, dim * mult)),
            nn.GELU(),
            kaiming_init_(nn.Linear(dim * mult, dim)),
        )

    def forward(self, x):
        return self.net(x)


class SpatialTransformer(nn.Module):
    """Per-frame transformer over the h*w tokens of each frame.

    Optional blocks, in order: cross-frame attention onto the keyframes
    (``cf``), self-attention, single-token context cross-attention, feed-forward.
    """

    def __init__(self, dim: int, heads: int = 2, context_dim: int | None = None):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = AttentionParams(dim, heads)
        self.ctx = None
        if context_dim is not None:
            self.norm_ctx = nn.LayerNorm(dim)
            # the context token is a condition-injection site
            self.ctx = AttentionParams(dim, heads, kv_dim=context_dim, zero_out=True)
        self.norm3 = nn.LayerNorm(dim)
        self.ff = FeedForward(dim)
        self.cf = None

    def add_cross_frame(self, heads: int = 2) -> None:
        dim = self.attn.dim
        self.norm_cf = nn.LayerNorm(dim)
        self.cf = AttentionParams(dim, heads, zero_out=True)

    def forward(self, x: torch.Tensor, context: torch.Tensor | None = None, cross_frame: bool = True) -> torch.Tensor:
        h, w = x.shape[2:]
        tok = to_tokens(x)
        if self.cf is not None and cross_frame:
            tok = tok + cross_frame_spatial(self.norm_cf(tok), self.cf)
        tok = tok + self_attend(self.norm1(tok), self.attn)
        if self.ctx is not None and context is not None:
            c = context.reshape(1, 1, -1).expand(tok.shape[0], 1, -1)
            tok = tok + attend(self.norm_ctx(tok), c, c, self.ctx)
        tok = tok + self.ff(self.norm3(tok))
        return from_tokens(tok, h, w)


class TemporalTransformer(nn.Module):
    """Per-location transformer along the frame axis.

    A fixed sinusoidal frame-index code is added to the attention inputs only.
    """

    def __init__(self, dim: int, heads: int = 2):
        super().__init__()
        self.dim = dim
        self.norm1 = nn.LayerNorm(dim)
        self.attn = AttentionParams(dim, heads)
        self.norm3 = nn.LayerNorm(dim)
        self.ff = FeedForward(dim)
        self.cf = None

    def add_cross_frame(self, heads: int = 2) -> None:
        self.norm_cf = nn.LayerNorm(self.dim)
        self.cf = AttentionParams(self.dim, heads, zero_out=True)

    def forward(self, x: torch.Tensor, cross_frame: bool = True) -> torch.Tensor:
        n, c, h, w = x.shape
        tok = to_tokens(x)  # [N, L, C]
        pos = sinusoid(torch.arange(n), c).to(x.dtype)[:, None, :]
        if self.cf is not None and cross_frame:
            tok = tok + cross_frame_temporal(self.norm_cf(tok) + pos, self.cf)
        seq = (self.norm1(tok) + pos).transpose(0, 1)  # [L, N, C]
        tok = tok + self_attend(seq, self.attn).transpose(0, 1)
        tok = tok + self.ff(self.norm3(tok))
        return from_tokens(tok, h, w)


class Stage(nn.Module):
    """Conv block, spatial transformer, temporal transformer."""

    def __init__(self, in_ch: int, out_ch: int, temb_dim: int, heads: int = 2, context_dim: int | None = None):
        super().__init__()
        self.res = ResBlock(in_ch, out_ch, temb_dim)
        self.spatial = SpatialTransformer(out_ch, heads, context_dim)
        self.temporal = TemporalTransformer(out_ch, heads)

    def add_cross_frame(self, heads: int = 2) -> None:
        self.spatial.add_cross_frame(heads)
        self.temporal.add_cross_frame(heads)

    def forward(self, x, temb, context=None, cross_frame: bool = True):
        h = self.res(x, temb)
        h = self.spatial(h, context, cross_frame)
        return self.temporal(h, cross_frame)


class Downsample(nn.Module):
    def __init__(self, ch: int):
        super().__init__()
        self.conv = conv3x3(ch, ch, stride=2)

    def forward(self, x):
        return self.conv(x)


class Upsample(nn.Module):
    def __init__(self, ch: int):
        super().__init__()
        self.conv = conv3x3(ch, ch)

    def forward(self, x):
        return self.conv(F.interpolate(x, scale_factor=2, mode="nearest"))
