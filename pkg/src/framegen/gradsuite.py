"""Finite-difference gradient checks for every differentiable component, at float64."""
from __future__ import annotations

from typing import Callable

import torch

from .attention import AttentionParams, cross_frame_spatial, cross_frame_temporal
from .condencoder import CondEncoder, ConditionBundle, TemporalBranch, condition_mask, temporal_branch
from .denoiser import Denoiser
from .diffusion import loss as v_loss
from .fusion import FusionParams, fuse
from .nncore import GradCheckReport, grad_check

TOLERANCE = 1e-4


def randomize_zero_params(module: torch.nn.Module, seed: int = 0, scale: float = 0.1) -> None:
    """Zero-initialized layers pass no gradient to what feeds them; give them random values."""
    g = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for p in module.parameters():
            if not p.any():
                p.copy_(torch.randn(p.shape, generator=g, dtype=p.dtype) * scale)


def _gen(seed: int) -> torch.Generator:
    return torch.Generator().manual_seed(seed)


def check_loss() -> GradCheckReport:
    g = _gen(0)
    target = torch.randn(2, 3, 4, generator=g, dtype=torch.float64)
    return grad_check(lambda p: v_loss(p, target), torch.randn(2, 3, 4, generator=g, dtype=torch.float64))


def check_fusion() -> GradCheckReport:
    torch.manual_seed(1)
    p = FusionParams(16, 8, heads=2, reduction=8).double()
    randomize_zero_params(p, seed=1, scale=0.3)
    g = _gen(1)
    F_s = torch.randn(2, 16, 3, 3, generator=g, dtype=torch.float64)
    F_t = torch.randn(2, 8, 3, 3, generator=g, dtype=torch.float64)
    return grad_check(lambda a, b: fuse(a, b, p), (F_s, F_t), params=p.named_parameters(), max_entries=16)


def _attention_check(fn: Callable, seed: int) -> GradCheckReport:
    torch.manual_seed(seed)
    p = AttentionParams(8, heads=2, head_dim=4).double()
    randomize_zero_params(p, seed=seed)
    x = torch.randn(4, 3, 8, generator=_gen(seed), dtype=torch.float64)
    return grad_check(lambda t: fn(t, p), x, params=p.named_parameters())


def check_cross_frame_spatial() -> GradCheckReport:
    return _attention_check(cross_frame_spatial, 2)


def check_cross_frame_temporal() -> GradCheckReport:
    return _attention_check(cross_frame_temporal, 3)


def check_temporal_branch() -> GradCheckReport:
    torch.manual_seed(4)
    tb = TemporalBranch(in_ch=2, out_ch=4, hidden=4).double()
    stack = torch.randn(2, 2, 8, 8, generator=_gen(4), dtype=torch.float64)
    return grad_check(lambda s: temporal_branch(s, tb), stack, params=tb.named_parameters())


def check_denoiser() -> GradCheckReport:
    """Base U-Net plus conditional encoder on a 2-frame 8x8 latent, one probe per tensor."""
    torch.manual_seed(5)
    base = Denoiser(100).double()
    enc = CondEncoder(base).double()
    randomize_zero_params(base, seed=1)
    randomize_zero_params(enc, seed=2)
    g = _gen(5)
    lat = torch.rand(2, 4, 8, 8, generator=g, dtype=torch.float64) * 2 - 1
    # a high-contrast stack keeps the fusion attention away from uniform weights,
    # where its Q/K gradients shrink to roundoff level
    stack = torch.randn(2, 7, 32, 32, generator=g, dtype=torch.float64) * 3
    stack[:, 6] = torch.tensor([0.0, 1.0], dtype=torch.float64)[:, None, None]
    bundle = ConditionBundle(torch.cat([lat, condition_mask(2, 8, 8, torch.float64)], dim=1), stack)
    params = list(base.named_parameters()) + [("cond." + n, p) for n, p in enc.named_parameters()]

    def fn(z):
        return base(z, 37, enc(bundle, base.timestep_embed(37)))

    z = torch.randn(2, 4, 8, 8, generator=g, dtype=torch.float64)
    return grad_check(fn, z, eps=1e-4, params=params, max_entries=1)


SUITES: dict[str, Callable[[], GradCheckReport]] = {
    "loss": check_loss,
    "fusion": check_fusion,
    "cross_frame_spatial": check_cross_frame_spatial,
    "cross_frame_temporal": check_cross_frame_temporal,
    "temporal_branch": check_temporal_branch,
    "denoiser": check_denoiser,
}


def run_all(log: Callable[[str], None] | None = None) -> dict[str, GradCheckReport]:
    reports = {}
    for name, fn in SUITES.items():
        reports[name] = fn()
        if log is not None:
            r = reports[name]
            log(f"{name:22s} max rel err {r.max_error:.3e}  {'PASS' if r.passed(TOLERANCE) else 'FAIL'}")
    return reports
