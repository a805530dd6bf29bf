"""CBAM gating of the spatial and temporal feature maps and their cross-attention fusion."""
from __future__ import annotations

import torch
import torch.nn as nn

from .attention import AttentionParams, attend
from .nncore import ShapeError, kaiming_init_


class CBAM(nn.Module):
    """Channel gate from avg/max pooled descriptors, then a 7x7 spatial gate."""

    def __init__(self, channels: int, reduction: int = 8, kernel: int = 7):
        super().__init__()
        if channels % reduction:
            raise ValueError(f"reduction {reduction} does not divide {channels} channels")
        hidden = channels // reduction
        self.mlp = nn.Sequential(
            kaiming_init_(nn.Linear(channels, hidden)),
            nn.ReLU(),
            kaiming_init_(nn.Linear(hidden, channels)),
        )
        self.spatial = kaiming_init_(nn.Conv2d(2, 1, kernel, padding=kernel // 2))

    def channel_gate(self, x: torch.Tensor) -> torch.Tensor:
        avg = x.mean(dim=(2, 3))
        mx = x.amax(dim=(2, 3))
        return torch.sigmoid(self.mlp(avg) + self.mlp(mx))[:, :, None, None]

    def spatial_gate(self, x: torch.Tensor) -> torch.Tensor:
        pooled = torch.cat([x.mean(dim=1, keepdim=True), x.amax(dim=1, keepdim=True)], dim=1)
        return torch.sigmoid(self.spatial(pooled))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = x * self.channel_gate(x)
        return x * self.spatial_gate(x)


def cbam(F: torch.Tensor, params: CBAM) -> torch.Tensor:
    if F.ndim != 4:
        raise ShapeError("cbam", f"expected [frames, C, h, w], got {tuple(F.shape)}")
    return params(F)


def to_tokens(F: torch.Tensor) -> torch.Tensor:
    n, c, h, w = F.shape
    return F.flatten(2).transpose(1, 2)  # [n, h*w, c]


def from_tokens(x: torch.Tensor, h: int, w: int) -> torch.Tensor:
    n, _, c = x.shape
    return x.transpose(1, 2).reshape(n, c, h, w)


class FusionParams(nn.Module):
    def __init__(self, spatial_ch: int, temporal_ch: int, heads: int = 2, reduction: int = 8):
        super().__init__()
        self.cbam_s = CBAM(spatial_ch, reduction)
        self.cbam_t = CBAM(temporal_ch, reduction)
        # zero output projection: at init the fused map is exactly the spatial path
        self.xattn = AttentionParams(spatial_ch, heads=heads, kv_dim=temporal_ch, zero_out=True)


def fuse(F_s: torch.Tensor, F_t: torch.Tensor, params: FusionParams) -> torch.Tensor:
    """Cross-attend CBAM-gated spatial tokens onto temporal tokens, per frame, plus residual."""
    if F_s.shape[0] != F_t.shape[0] or F_s.shape[2:] != F_t.shape[2:]:
        raise ShapeError("fuse", f"F_s {tuple(F_s.shape)} and F_t {tuple(F_t.shape)} disagree on frames/size")
    h, w = F_s.shape[2:]
    s = cbam(F_s, params.cbam_s)
    t = cbam(F_t, params.cbam_t)
    ts = to_tokens(t)
    fused = attend(to_tokens(s), ts, ts, params.xattn)
    return from_tokens(fused, h, w) + s


def spatial_path(F_s: torch.Tensor, params: FusionParams) -> torch.Tensor:
    """What :func:`fuse` reduces to when the temporal branch is switched off."""
    return cbam(F_s, params.cbam_s)
