"""Variance-preserving cosine schedule, v-parameterization and a DDIM-style sampler.

The v-target follows ``v = alpha_t * z - sigma_t * eps``. With that
convention ``z_t + v = 2 alpha_t z`` and ``z_t - v = 2 sigma_t eps``, which is
what :func:`recover` inverts.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
import torch

from .nncore import ShapeError, mse

COSINE_OFFSET = 0.008
CLAMP_FLOOR = 1e-4


@dataclass(frozen=True)
class NoiseSchedule:
    T: int
    alpha: np.ndarray  # float64, length T + 1
    sigma: np.ndarray

    def coeffs(self, t, like: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """alpha_t, sigma_t broadcastable against ``like`` (t scalar or per leading item)."""
        t_arr = np.asarray(t.detach().cpu().numpy() if torch.is_tensor(t) else t)
        if t_arr.size and (t_arr.min() < 0 or t_arr.max() > self.T):
            raise ValueError(f"timestep outside [0, {self.T}]")
        a = torch.as_tensor(self.alpha[t_arr], dtype=like.dtype)
        s = torch.as_tensor(self.sigma[t_arr], dtype=like.dtype)
        if a.ndim:
            shape = (-1,) + (1,) * (like.ndim - 1)
            a, s = a.reshape(shape), s.reshape(shape)
        return a, s


def cosine_alpha(t: float, T: int, s: float = COSINE_OFFSET) -> float:
    f = math.cos(math.pi / 2 * (t / T + s) / (1 + s))
    f0 = math.cos(math.pi / 2 * s / (1 + s))
    return f / f0


def make_schedule(T: int) -> NoiseSchedule:
    if T < 2:
        raise ValueError(f"schedule needs T >= 2, got {T}")
    s = COSINE_OFFSET
    t = np.arange(T + 1, dtype=np.float64)
    alpha = np.cos(np.pi / 2 * (t / T + s) / (1 + s)) / np.cos(np.pi / 2 * s / (1 + s))
    alpha = np.clip(alpha, CLAMP_FLOOR, 1.0)
    sigma = np.sqrt(np.clip(1.0 - alpha**2, 0.0, None))
    sigma = np.maximum(sigma, CLAMP_FLOOR)
    return NoiseSchedule(T, alpha, sigma)


def _same_shape(name: str, a: torch.Tensor, b: torch.Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(name, f"shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")


def add_noise(z: torch.Tensor, eps: torch.Tensor, t, sched: NoiseSchedule) -> torch.Tensor:
    _same_shape("add_noise", z, eps)
    a, s = sched.coeffs(t, z)
    return a * z + s * eps


def v_target(z: torch.Tensor, eps: torch.Tensor, t, sched: NoiseSchedule) -> torch.Tensor:
    _same_shape("v_target", z, eps)
    a, s = sched.coeffs(t, z)
    return a * z - s * eps


def recover(z_t: torch.Tensor, v: torch.Tensor, t, sched: NoiseSchedule) -> tuple[torch.Tensor, torch.Tensor]:
    """Invert (add_noise, v_target): returns (z_hat, eps_hat)."""
    _same_shape("recover", z_t, v)
    a, s = sched.coeffs(t, z_t)
    if (a < CLAMP_FLOOR).any() or (s < CLAMP_FLOOR).any():
        raise ValueError("recover: alpha_t or sigma_t below the clamp floor")
    return (z_t + v) / (2 * a), (z_t - v) / (2 * s)


def loss(v_pred: torch.Tensor, v: torch.Tensor) -> torch.Tensor:
    return mse(v_pred, v)


def sample_timesteps(n: int, T: int, generator: torch.Generator) -> torch.Tensor:
    # endpoints 0 and T are excluded
    return torch.randint(1, T, (n,), generator=generator)


def timestep_sequence(T: int, steps: int) -> list[int]:
    """Uniformly strided, strictly decreasing timesteps from T down to 0."""
    ts = np.round(np.linspace(T, 0, steps + 1)).astype(int)
    return [int(x) for x in ts]


@torch.no_grad()
def sample(
    model: Callable[[torch.Tensor, int], torch.Tensor],
    shape: tuple[int, ...],
    sched: NoiseSchedule,
    steps: int,
    seed: int,
    dtype: torch.dtype = torch.float32,
    clip: float | None = None,
    noise: torch.Tensor | None = None,
) -> torch.Tensor:
    """Deterministic reverse diffusion from pure noise.

    ``model(z_t, t)`` returns a v prediction; the condition is closed over by
    the caller. ``clip`` bounds each clean-latent estimate to ``[-clip, clip]``
    before re-noising, which keeps the early steps (where alpha_t is tiny) from
    amplifying prediction error.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if noise is None:
        gen = torch.Generator().manual_seed(seed)
        noise = torch.randn(shape, generator=gen, dtype=torch.float64)
    z = noise.to(dtype)
    ts = timestep_sequence(sched.T, steps)
    z_hat = z
    for i, (t, t_next) in enumerate(zip(ts[:-1], ts[1:])):
        try:
            v = model(z, t)
        except FloatingPointError as e:
            raise FloatingPointError(f"non-finite values at sampling step {i} (t={t}): {e}") from e
        z_hat, eps_hat = recover(z, v, t, sched)
        if clip is not None:
            z_hat = z_hat.clamp(-clip, clip)
        if not (torch.isfinite(z_hat).all() and torch.isfinite(eps_hat).all()):
            raise FloatingPointError(f"non-finite latent at sampling step {i} (t={t})")
        if t_next > 0:
            z = add_noise(z_hat, eps_hat, t_next, sched)
    return z_hat
