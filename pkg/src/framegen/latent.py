"""Small deterministic autoencoder: frames [N,3,H,W] <-> latents [N,C,H/4,W/4]."""
from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from .nncore import ShapeError, groupnorm, kaiming_init_, mse

FACTOR = 4


def _conv(i: int, o: int, stride: int = 1) -> nn.Conv2d:
    return kaiming_init_(nn.Conv2d(i, o, 3, stride=stride, padding=1))


class Autoencoder(nn.Module):
    """Two stride-2 convolutions down, nearest-upsample + conv back up.

    Latents pass through ``tanh`` so they live in [-1, 1]; the sampler relies
    on that bound when clipping clean-latent estimates.
    """

    def __init__(self, latent_channels: int = 4, width: int = 32):
        super().__init__()
        self.latent_channels = latent_channels
        self.encoder = nn.Sequential(
            _conv(3, width),
            nn.SiLU(),
            _conv(width, width, stride=2),
            groupnorm(width),
            nn.SiLU(),
            _conv(width, 2 * width, stride=2),
            groupnorm(2 * width),
            nn.SiLU(),
            _conv(2 * width, latent_channels),
        )
        self.decoder = nn.Sequential(
            _conv(latent_channels, 2 * width),
            nn.SiLU(),
            nn.Upsample(scale_factor=2, mode="nearest"),
            _conv(2 * width, width),
            groupnorm(width),
            nn.SiLU(),
            nn.Upsample(scale_factor=2, mode="nearest"),
            _conv(width, width),
            groupnorm(width),
            nn.SiLU(),
            _conv(width, 3),
        )

    def encode(self, frames: torch.Tensor) -> torch.Tensor:
        if frames.ndim != 4 or frames.shape[1] != 3:
            raise ShapeError("encode", f"expected [N,3,H,W], got {tuple(frames.shape)}")
        h, w = frames.shape[-2:]
        if h % FACTOR or w % FACTOR:
            raise ShapeError("encode", f"H, W must be divisible by {FACTOR}, got {h}x{w}")
        return torch.tanh(self.encoder(frames))

    def decode_raw(self, latents: torch.Tensor) -> torch.Tensor:
        if latents.ndim != 4 or latents.shape[1] != self.latent_channels:
            raise ShapeError(
                "decode", f"expected [N,{self.latent_channels},h,w], got {tuple(latents.shape)}"
            )
        return self.decoder(latents)

    def decode(self, latents: torch.Tensor) -> torch.Tensor:
        return self.decode_raw(latents).clamp(0.0, 1.0)

    def forward(self, frames: torch.Tensor) -> torch.Tensor:
        return self.decode_raw(self.encode(frames))


def recon_loss(x: torch.Tensor, x_hat: torch.Tensor) -> torch.Tensor:
    return mse(x, x_hat)


def train_autoencoder(
    ae: Autoencoder,
    frames: torch.Tensor,
    steps: int,
    lr: float = 2e-3,
    batch: int = 16,
    seed: int = 0,
    log=None,
) -> list[float]:
    """Fit ``ae`` on a pool of frames [M,3,H,W]; returns the loss curve."""
    gen = torch.Generator().manual_seed(seed)
    opt = torch.optim.AdamW(ae.parameters(), lr=lr, weight_decay=0.0)
    sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, T_max=max(steps, 1), eta_min=lr * 0.05)
    curve = []
    ae.train()
    for step in range(steps):
        idx = torch.randint(0, frames.shape[0], (batch,), generator=gen)
        x = frames[idx]
        loss = recon_loss(ae(x), x)
        opt.zero_grad(set_to_none=True)
        loss.backward()
        opt.step()
        sched.step()
        curve.append(loss.item())
        if log is not None and (step % 100 == 0 or step == steps - 1):
            log(step, loss.item())
    ae.eval()
    for p in ae.parameters():
        p.requires_grad_(False)
    return curve


def frame_rmse(ae: Autoencoder, frames: torch.Tensor) -> float:
    with torch.no_grad():
        out = ae.decode(ae.encode(frames))
    return float(F.mse_loss(out, frames).sqrt())
