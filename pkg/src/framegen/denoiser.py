"""Base video U-Net predicting v from (z_t, t, condition)."""
from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from .blocks import Downsample, Stage, Upsample, conv3x3
from .condencoder import ConditionFeatures, zero_inject
from .nncore import ShapeError, groupnorm, kaiming_init_, sinusoid

TIME_FEATURES = 64


def timestep_features(t, T: int) -> torch.Tensor:
    """Raw sinusoidal features of t, before the MLP: [sin(t w_k) ..., cos(t w_k) ...]."""
    t = torch.as_tensor(t)
    if (t < 0).any() or (t > T).any():
        raise ValueError(f"timestep {t.tolist()} outside [0, {T}]")
    return sinusoid(t, TIME_FEATURES)


class Denoiser(nn.Module):
    """Two-level U-Net over latent video [N, C, h, w].

    Condition features are added to the two skip connections and to the
    mid-block output through the condition's zero convolutions.
    """

    def __init__(
        self,
        T: int,
        latent_ch: int = 4,
        channels: tuple[int, int] = (32, 64),
        heads: int = 2,
        temb_dim: int = 128,
        context_dim: int = 64,
    ):
        super().__init__()
        c0, c1 = channels
        self.T = T
        self.latent_ch = latent_ch
        self.channels = (c0, c1)
        self.context_dim = context_dim
        self.time_mlp = nn.Sequential(
            kaiming_init_(nn.Linear(TIME_FEATURES, temb_dim)),
            nn.SiLU(),
            kaiming_init_(nn.Linear(temb_dim, temb_dim)),
        )
        self.conv_in = conv3x3(latent_ch, c0)
        self.down0 = Stage(c0, c0, temb_dim, heads, context_dim)
        self.downsample = Downsample(c0)
        self.down1 = Stage(c0, c1, temb_dim, heads, context_dim)
        self.mid = Stage(c1, c1, temb_dim, heads, context_dim)
        self.up1 = Stage(2 * c1, c1, temb_dim, heads, context_dim)
        self.upsample = Upsample(c1)
        self.up0 = Stage(c1 + c0, c0, temb_dim, heads, context_dim)
        self.norm_out = groupnorm(c0)
        self.conv_out = conv3x3(c0, latent_ch)

    def timestep_embed(self, t) -> torch.Tensor:
        dtype = self.conv_in.weight.dtype
        return self.time_mlp(timestep_features(t, self.T).to(dtype))

    def encoder(self, z_t: torch.Tensor, temb: torch.Tensor, context: torch.Tensor | None) -> list[torch.Tensor]:
        s0 = self.down0(self.conv_in(z_t), temb, context)
        s1 = self.down1(self.downsample(s0), temb, context)
        m = self.mid(s1, temb, context)
        return [s0, s1, m]

    def forward(self, z_t: torch.Tensor, t, condition: ConditionFeatures | None = None) -> torch.Tensor:
        if z_t.ndim != 4 or z_t.shape[1] != self.latent_ch:
            raise ShapeError("denoiser.input", f"expected [N,{self.latent_ch},h,w], got {tuple(z_t.shape)}")
        if z_t.shape[2] % 2 or z_t.shape[3] % 2:
            raise ShapeError("denoiser.input", f"latent grid {tuple(z_t.shape[2:])} must be even")
        temb = self.timestep_embed(t)
        context = condition.context if condition is not None else None
        s0, s1, m = self.encoder(z_t, temb, context)
        if condition is not None:
            s0, s1, m = zero_inject([s0, s1, m], condition.stages, condition.inject)
        h = self.up1(torch.cat([m, s1], dim=1), temb, context)
        h = self.upsample(h)
        h = self.up0(torch.cat([h, s0], dim=1), temb, context)
        return self.conv_out(F.silu(self.norm_out(h)))


def denoise(z_t: torch.Tensor, t, condition: ConditionFeatures | None, params: Denoiser) -> torch.Tensor:
    return params(z_t, t, condition)
