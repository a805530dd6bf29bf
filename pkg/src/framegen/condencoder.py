"""Conditional encoder: keyframe-only condition inputs, fusion, replicated down-path, zero injection.

Nothing here ever sees the noised latents. The condition inputs are built
from the two keyframes (plus N and, downstream, the timestep embedding).
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .blocks import conv3x3
from .fusion import FusionParams, fuse, spatial_path
from .latent import Autoencoder
from .motion import FlowConfig, bidirectional_flow, build_temporal_stack, depth_map
from .nncore import ShapeError, kaiming_init_, zero_conv1x1

STACK_CH = 7


@dataclass
class ConditionBundle:
    """Parameter-free condition inputs for one clip."""

    spatial_latents: torch.Tensor  # [N, latent_ch + 1, h, w], last channel is the mask
    temporal_stack: torch.Tensor  # [N, 7, H, W]

    @property
    def n(self) -> int:
        return self.spatial_latents.shape[0]

    @property
    def mask(self) -> torch.Tensor:
        return self.spatial_latents[:, -1:]

    @property
    def keyframe_latents(self) -> tuple[torch.Tensor, torch.Tensor]:
        return self.spatial_latents[0, :-1], self.spatial_latents[-1, :-1]

    def to(self, dtype: torch.dtype) -> "ConditionBundle":
        return ConditionBundle(self.spatial_latents.to(dtype), self.temporal_stack.to(dtype))


@dataclass
class ConditionFeatures:
    """Per-injection-site features plus the context token, ready for the denoiser."""

    stages: list[torch.Tensor]
    context: torch.Tensor | None
    inject: Sequence[nn.Module] = field(default_factory=list)


def condition_mask(N: int, h: int, w: int, dtype=torch.float32) -> torch.Tensor:
    m = torch.zeros(N, 1, h, w, dtype=dtype)
    m[0] = 1
    m[-1] = 1
    return m


def build_spatial_condition(ae: Autoencoder, first: torch.Tensor, last: torch.Tensor, N: int):
    """Keyframes with zero images in between, encoded, with the binary mask appended."""
    if N < 3:
        raise ValueError(f"need N >= 3 frames, got {N}")
    if first.shape != last.shape:
        raise ShapeError("build_spatial_condition", f"keyframes differ: {tuple(first.shape)} vs {tuple(last.shape)}")
    frames = torch.zeros((N,) + tuple(first.shape), dtype=first.dtype)
    frames[0] = first
    frames[-1] = last
    with torch.no_grad():
        lat = ae.encode(frames)
    mask = condition_mask(N, lat.shape[2], lat.shape[3], lat.dtype)
    return torch.cat([lat, mask], dim=1), mask


def build_condition(
    ae: Autoencoder,
    first: np.ndarray,
    last: np.ndarray,
    N: int,
    depth_first: np.ndarray | None = None,
    depth_last: np.ndarray | None = None,
    flow_cfg: FlowConfig = FlowConfig(),
) -> ConditionBundle:
    """All condition inputs from the two keyframes.

    ``depth_first``/``depth_last`` override the intensity fallback of
    :func:`motion.depth_map` (for example with generator layer depth).
    """
    fwd, bwd = bidirectional_flow(first, last, flow_cfg)
    if depth_first is None:
        depth_first = depth_map(first)
    if depth_last is None:
        depth_last = depth_map(last)
    stack = build_temporal_stack(fwd, bwd, depth_first, depth_last, N)
    spatial, _ = build_spatial_condition(
        ae, torch.from_numpy(np.asarray(first, dtype=np.float32)), torch.from_numpy(np.asarray(last, dtype=np.float32)), N
    )
    return ConditionBundle(spatial, torch.from_numpy(stack))


class TemporalBranch(nn.Module):
    """Three convolutions bringing the [N,7,H,W] stack down to the latent grid."""

    def __init__(self, in_ch: int = STACK_CH, out_ch: int = 32, hidden: int = 32):
        super().__init__()
        self.conv1 = conv3x3(in_ch, hidden, stride=2)
        self.conv2 = conv3x3(hidden, hidden, stride=2)
        self.conv3 = conv3x3(hidden, out_ch)

    def forward(self, stack: torch.Tensor) -> torch.Tensor:
        h = F.silu(self.conv1(stack))
        h = F.silu(self.conv2(h))
        return self.conv3(h)


def temporal_branch(stack: torch.Tensor, params: TemporalBranch, latent_hw: tuple[int, int] | None = None):
    H, W = stack.shape[-2:]
    if H % 4 or W % 4:
        raise ShapeError("temporal_branch", f"stack {H}x{W} does not map onto a 4x smaller latent grid")
    if latent_hw is not None and (H // 4, W // 4) != tuple(latent_hw):
        raise ShapeError("temporal_branch", f"stack {H}x{W} does not match latent grid {latent_hw}")
    return params(stack)


class KeyframeContext(nn.Module):
    def __init__(self, latent_ch: int = 4, dim: int = 64):
        super().__init__()
        self.mlp = nn.Sequential(
            kaiming_init_(nn.Linear(2 * latent_ch, dim)),
            nn.SiLU(),
            kaiming_init_(nn.Linear(dim, dim)),
        )

    def forward(self, first_latent: torch.Tensor, last_latent: torch.Tensor) -> torch.Tensor:
        pooled = torch.cat([first_latent.mean(dim=(-2, -1)), last_latent.mean(dim=(-2, -1))])
        return self.mlp(pooled)


def keyframe_context(bundle: ConditionBundle, params: KeyframeContext) -> torch.Tensor:
    return params(*bundle.keyframe_latents)


def zero_inject(
    base: Sequence[torch.Tensor], cond: Sequence[torch.Tensor], convs: Sequence[nn.Module]
) -> list[torch.Tensor]:
    """``base + zero_conv(cond)`` at every site."""
    if not (len(base) == len(cond) == len(convs)):
        raise ShapeError("zero_inject", f"{len(base)} base sites, {len(cond)} condition sites, {len(convs)} convs")
    out = []
    for i, (b, c, conv) in enumerate(zip(base, cond, convs)):
        r = conv(c)
        if r.shape != b.shape:
            raise ShapeError(f"zero_inject[{i}]", f"condition {tuple(r.shape)} vs base {tuple(b.shape)}")
        out.append(b + r)
    return out


class CondEncoder(nn.Module):
    """Replicates the base encoder (copied weights) behind a spatial/temporal fusion front end.

    ``use_temporal`` and ``use_cross_frame`` switch the two ablatable
    components off without changing the parameter layout.
    """

    def __init__(
        self,
        base,
        latent_ch: int = 4,
        temporal_ch: int = 32,
        heads: int = 2,
        use_temporal: bool = True,
        use_cross_frame: bool = True,
    ):
        super().__init__()
        c0, c1 = base.channels
        self.use_temporal = use_temporal
        self.use_cross_frame = use_cross_frame
        self.spatial_in = conv3x3(latent_ch + 1, c0)
        self.temporal = TemporalBranch(STACK_CH, temporal_ch)
        self.fusion = FusionParams(c0, temporal_ch, heads)
        self.context = KeyframeContext(latent_ch, base.context_dim)
        self.down0 = copy.deepcopy(base.down0)
        self.downsample = copy.deepcopy(base.downsample)
        self.down1 = copy.deepcopy(base.down1)
        self.mid = copy.deepcopy(base.mid)
        for stage in (self.down0, self.down1, self.mid):
            stage.add_cross_frame(heads)
        self.inject = nn.ModuleList([zero_conv1x1(c0, c0), zero_conv1x1(c1, c1), zero_conv1x1(c1, c1)])

    def inactive_modules(self) -> list[nn.Module]:
        off = []
        if not self.use_temporal:
            off += [self.temporal, self.fusion.cbam_t, self.fusion.xattn]
        if not self.use_cross_frame:
            for stage in (self.down0, self.down1, self.mid):
                off += [stage.spatial.cf, stage.spatial.norm_cf, stage.temporal.cf, stage.temporal.norm_cf]
        return off

    def fused_input(self, bundle: ConditionBundle) -> torch.Tensor:
        F_s = self.spatial_in(bundle.spatial_latents)
        if not self.use_temporal:
            return spatial_path(F_s, self.fusion)
        F_t = temporal_branch(bundle.temporal_stack, self.temporal, F_s.shape[2:])
        return fuse(F_s, F_t, self.fusion)

    def stages(self, x: torch.Tensor, temb: torch.Tensor, context: torch.Tensor | None) -> list[torch.Tensor]:
        xf = self.use_cross_frame
        s0 = self.down0(x, temb, context, xf)
        s1 = self.down1(self.downsample(s0), temb, context, xf)
        m = self.mid(s1, temb, context, xf)
        return [s0, s1, m]

    def forward(self, bundle: ConditionBundle, temb: torch.Tensor) -> ConditionFeatures:
        context = keyframe_context(bundle, self.context)
        feats = self.stages(self.fused_input(bundle), temb, context)
        return ConditionFeatures(feats, context, self.inject)


def encode_condition(bundle: ConditionBundle, temb: torch.Tensor, params: CondEncoder) -> ConditionFeatures:
    return params(bundle, temb)
