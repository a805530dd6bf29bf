"""Differentiable building blocks and a finite-difference gradient checker.

Reverse-mode gradients come from torch autograd. ``grad_check`` is an
independent central-difference oracle that never touches autograd for the
numerical side.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F

DEFAULT_GROUPS = 8


class ShapeError(ValueError):
    """Raised when a tensor does not fit the layer it is fed to."""

    def __init__(self, layer: str, message: str):
        super().__init__(f"{layer}: {message}")
        self.layer = layer


def softmax(x: torch.Tensor, axis: int = -1) -> torch.Tensor:
    if not torch.isfinite(x).all():
        bad = int((~torch.isfinite(x)).sum())
        raise FloatingPointError(f"softmax: {bad} non-finite input value(s)")
    shifted = x - x.amax(dim=axis, keepdim=True)
    e = torch.exp(shifted)
    return e / e.sum(dim=axis, keepdim=True)


def group_count(channels: int, groups: int = DEFAULT_GROUPS) -> int:
    # largest divisor of channels not above the requested group count
    g = min(groups, channels)
    while channels % g:
        g -= 1
    return g


def kaiming_init_(module: nn.Module) -> nn.Module:
    nn.init.kaiming_uniform_(module.weight, a=math.sqrt(5))
    if module.bias is not None:
        fan_in = module.weight[0].numel()
        bound = 1.0 / math.sqrt(fan_in)
        nn.init.uniform_(module.bias, -bound, bound)
    return module


def zero_module(module: nn.Module) -> nn.Module:
    for p in module.parameters():
        nn.init.zeros_(p)
    return module


def zero_conv1x1(in_ch: int, out_ch: int) -> nn.Conv2d:
    return zero_module(nn.Conv2d(in_ch, out_ch, kernel_size=1))


def groupnorm(channels: int, groups: int = DEFAULT_GROUPS) -> nn.GroupNorm:
    return nn.GroupNorm(group_count(channels, groups), channels, eps=1e-5)


@dataclass(frozen=True)
class LayerSpec:
    """Declarative description of one layer in a feed-forward stack."""

    kind: str
    in_ch: int = 0
    out_ch: int = 0
    k: int = 3
    stride: int = 1
    pad: int | None = None
    groups: int = DEFAULT_GROUPS
    init: str = "kaiming-uniform"

    def build(self) -> nn.Module:
        if self.kind == "dense":
            layer = nn.Linear(self.in_ch, self.out_ch)
        elif self.kind == "conv2d":
            pad = self.k // 2 if self.pad is None else self.pad
            layer = nn.Conv2d(self.in_ch, self.out_ch, self.k, stride=self.stride, padding=pad)
        elif self.kind == "zero-conv-1x1":
            return zero_conv1x1(self.in_ch, self.out_ch)
        elif self.kind == "groupnorm":
            return groupnorm(self.in_ch, self.groups)
        elif self.kind == "sigmoid":
            return nn.Sigmoid()
        elif self.kind == "silu":
            return nn.SiLU()
        else:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.init == "zeros":
            return zero_module(layer)
        return kaiming_init_(layer)


def build(specs: Sequence[LayerSpec]) -> nn.Sequential:
    return nn.Sequential(*(s.build() for s in specs))


def _call_named(net: nn.Module, *inputs: torch.Tensor) -> torch.Tensor:
    """Run ``net`` and re-raise shape failures with the offending layer's name."""
    names = {m: n or type(net).__name__ for n, m in net.named_modules()}
    stack: list[str] = []

    def pre(mod, _inp):
        stack.append(names.get(mod, type(mod).__name__))

    def post(_mod, _inp, _out):
        stack.pop()

    handles = []
    for m in names:
        handles.append(m.register_forward_pre_hook(pre))
        handles.append(m.register_forward_hook(post))
    try:
        return net(*inputs)
    except RuntimeError as exc:
        layer = stack[-1] if stack else type(net).__name__
        raise ShapeError(layer, str(exc).splitlines()[0]) from exc
    finally:
        for h in handles:
            h.remove()


def forward_backward(
    net: nn.Module,
    x: torch.Tensor,
    cotangent: torch.Tensor | None = None,
) -> tuple[torch.Tensor, dict[str, torch.Tensor]]:
    """Forward pass plus the vector-Jacobian product with ``cotangent``.

    Returns ``y`` and a dict of gradients keyed by parameter name, with the
    input gradient under ``"input"``. The cotangent defaults to ones.
    """
    x = x.detach().requires_grad_(True)
    params = dict(net.named_parameters())
    y = _call_named(net, x)
    if cotangent is None:
        cotangent = torch.ones_like(y)
    wrt = [x] + list(params.values())
    grads = torch.autograd.grad(y, wrt, grad_outputs=cotangent, allow_unused=True)
    out = {"input": grads[0] if grads[0] is not None else torch.zeros_like(x)}
    for (name, p), g in zip(params.items(), grads[1:]):
        out[name] = g if g is not None else torch.zeros_like(p)
    return y.detach(), out


@dataclass
class GradCheckReport:
    errors: dict[str, float] = field(default_factory=dict)
    checked: dict[str, int] = field(default_factory=dict)

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    def passed(self, tol: float = 1e-4) -> bool:
        return self.max_error < tol

    def failures(self, tol: float = 1e-4) -> list[str]:
        return [k for k, v in self.errors.items() if v >= tol]

    def __str__(self) -> str:
        lines = [f"{k:60s} {v:.3e} ({self.checked[k]} entries)" for k, v in self.errors.items()]
        return "\n".join(lines + [f"max relative error {self.max_error:.3e}"])


def relative_error(g_ad: torch.Tensor, g_fd: torch.Tensor) -> torch.Tensor:
    denom = torch.maximum(torch.maximum(g_ad.abs(), g_fd.abs()), torch.full_like(g_ad, 1e-8))
    return (g_ad - g_fd).abs() / denom


def grad_check(
    fn: nn.Module | Callable[..., torch.Tensor],
    inputs: torch.Tensor | Sequence[torch.Tensor],
    eps: float = 1e-5,
    params: Iterable[tuple[str, torch.Tensor]] | None = None,
    check_inputs: bool = True,
    max_entries: int | None = None,
    seed: int = 0,
) -> GradCheckReport:
    """Compare autograd gradients against central differences.

    The checked scalar is ``sum(fn(*inputs) * r)`` for a fixed random
    projection ``r``. ``max_entries`` caps the number of coordinates probed
    per tensor (chosen at random with ``seed``); ``None`` probes all of them.
    Everything must already be float64.
    """
    if not 1e-7 <= eps <= 1e-3:
        raise ValueError(f"eps={eps} outside [1e-7, 1e-3]")
    if isinstance(inputs, torch.Tensor):
        inputs = (inputs,)
    inputs = tuple(t.detach().clone() for t in inputs)
    if params is None:
        params = fn.named_parameters() if isinstance(fn, nn.Module) else ()
    params = [(n, p) for n, p in params if p.requires_grad]
    targets = [(f"input{i}", t) for i, t in enumerate(inputs) if check_inputs and t.is_floating_point()]
    targets += params
    for name, t in targets:
        if t.dtype != torch.float64:
            raise TypeError(f"grad_check needs float64, {name} is {t.dtype}")

    with torch.no_grad():
        probe = fn(*inputs)
    gen = torch.Generator().manual_seed(seed)
    proj = torch.randn(probe.shape, generator=gen, dtype=torch.float64)

    def objective() -> torch.Tensor:
        return (fn(*inputs) * proj).sum()

    for _, t in targets:
        t.requires_grad_(True)
    grads = torch.autograd.grad(objective(), [t for _, t in targets], allow_unused=True)
    for _, t in targets:
        if not isinstance(t, nn.Parameter):
            t.requires_grad_(False)

    report = GradCheckReport()
    with torch.no_grad():
        for (name, t), g in zip(targets, grads):
            g = torch.zeros_like(t) if g is None else g
            flat = t.view(-1)
            n = flat.numel()
            if max_entries is not None and n > max_entries:
                idx = torch.randperm(n, generator=gen)[:max_entries].tolist()
            else:
                idx = range(n)
            worst = 0.0
            count = 0
            for i in idx:
                old = flat[i].item()
                flat[i] = old + eps
                up = objective().item()
                flat[i] = old - eps
                down = objective().item()
                flat[i] = old
                fd = (up - down) / (2 * eps)
                err = relative_error(g.reshape(-1)[i : i + 1], torch.tensor([fd], dtype=torch.float64)).item()
                worst = max(worst, err)
                count += 1
            report.errors[name] = worst
            report.checked[name] = count
    return report


def sinusoid(positions: torch.Tensor, dim: int, max_period: float = 10000.0) -> torch.Tensor:
    """Sinusoidal features ``[sin(p*w_k), cos(p*w_k)]`` with log-spaced ``w_k``."""
    half = dim // 2
    freqs = torch.exp(-math.log(max_period) * torch.arange(half, dtype=torch.float64) / half)
    args = positions.to(torch.float64)[..., None] * freqs
    return torch.cat([torch.sin(args), torch.cos(args)], dim=-1)


def mse(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    if a.shape != b.shape:
        raise ShapeError("mse", f"shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")
    return F.mse_loss(a, b)
