"""Training, interpolation, evaluation and the four-row ablation harness."""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch
import torch.nn as nn

from . import checkpoint as ckpt
from .condencoder import CondEncoder, ConditionBundle, ConditionFeatures, build_condition
from .data import Clip, psnr, ssim
from .denoiser import Denoiser
from .diffusion import add_noise, loss as v_loss, make_schedule, sample, sample_timesteps, v_target
from .latent import Autoencoder, train_autoencoder
from .motion import depth_map

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    T: int = 1000
    lr: float = 1e-4  # the paper-scale model used 1e-5
    weight_decay: float = 1e-2
    batch: int = 1
    steps: int = 2000
    seed: int = 0
    no_temporal: bool = False
    no_xattn: bool = False
    freeze_base: bool = False
    N: int = 9
    H: int = 64
    W: int = 64
    steps_infer: int = 20
    latent_clip: float | None = 1.0
    ae_steps: int = 1500
    ae_lr: float = 2e-3
    cosine_lr: bool = False  # decay the learning rate to zero over ``steps``

    def __post_init__(self):
        if self.N < 3:
            raise ValueError("N must be >= 3")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


class VFIModel(nn.Module):
    """Frozen autoencoder + base denoiser + conditional encoder."""

    def __init__(self, cfg: TrainConfig, ae: Autoencoder | None = None):
        super().__init__()
        torch.manual_seed(cfg.seed)
        self.cfg = cfg
        self.ae = ae if ae is not None else Autoencoder()
        for p in self.ae.parameters():
            p.requires_grad_(False)
        self.sched = make_schedule(cfg.T)
        self.base = Denoiser(cfg.T)
        self.cond = CondEncoder(self.base, use_temporal=not cfg.no_temporal, use_cross_frame=not cfg.no_xattn)
        if cfg.freeze_base:
            for p in self.base.parameters():
                p.requires_grad_(False)

    def condition(self, bundle: ConditionBundle, t) -> ConditionFeatures:
        return self.cond(bundle, self.base.timestep_embed(t))

    def forward(self, z_t: torch.Tensor, t, bundle: ConditionBundle | None = None) -> torch.Tensor:
        feats = self.condition(bundle, t) if bundle is not None else None
        return self.base(z_t, t, feats)

    def trainable(self) -> list[nn.Parameter]:
        inactive = {id(p) for m in self.cond.inactive_modules() for p in m.parameters()}
        return [p for p in list(self.base.parameters()) + list(self.cond.parameters())
                if p.requires_grad and id(p) not in inactive]

    def active_parameter_count(self) -> int:
        """Parameters that take part in a forward pass under the current flags (autoencoder excluded)."""
        inactive = {id(p) for m in self.cond.inactive_modules() for p in m.parameters()}
        params = list(self.base.parameters()) + list(self.cond.parameters())
        return sum(p.numel() for p in params if id(p) not in inactive)


# --- condition inputs -----------------------------------------------------


def condition_for_clip(ae: Autoencoder, clip: Clip, N: int | None = None) -> ConditionBundle:
    """Condition inputs from the clip's keyframes only, plus keyframe depth when the meta carries it.

    ``meta["depth"]`` is a [N,1,H,W] depth clip; ``meta["layers"]`` are generator layer indices.
    """
    first, last = clip.frames[0], clip.frames[-1]
    d_first = d_last = None
    if clip.meta is not None and "depth" in clip.meta:
        d_first, d_last = clip.meta["depth"][0], clip.meta["depth"][-1]
    elif clip.meta is not None and "layers" in clip.meta:
        layers = clip.meta["layers"]
        d_first = depth_map(first, layers[0], clip.meta["n_layers"])
        d_last = depth_map(last, layers[-1], clip.meta["n_layers"])
    return build_condition(ae, first, last, N or clip.n, d_first, d_last)


@dataclass
class Prepared:
    latents: torch.Tensor
    bundle: ConditionBundle


def prepare(ae: Autoencoder, clips: Sequence[Clip]) -> list[Prepared]:
    out = []
    with torch.no_grad():
        for c in clips:
            z = ae.encode(torch.from_numpy(c.frames))
            out.append(Prepared(z, condition_for_clip(ae, c)))
    return out


# --- training -------------------------------------------------------------


def pretrain_autoencoder(clips: Sequence[Clip], cfg: TrainConfig, log_fn=None) -> tuple[Autoencoder, list[float]]:
    torch.manual_seed(cfg.seed)
    ae = Autoencoder()
    frames = torch.from_numpy(np.concatenate([c.frames for c in clips]))
    curve = train_autoencoder(ae, frames, cfg.ae_steps, lr=cfg.ae_lr, seed=cfg.seed, log=log_fn)
    return ae, curve


def train_step_loss(model: VFIModel, item: Prepared, gen: torch.Generator) -> torch.Tensor:
    z = item.latents
    t = int(sample_timesteps(1, model.cfg.T, gen)[0])
    eps = torch.randn(z.shape, generator=gen)
    z_t = add_noise(z, eps, t, model.sched)
    v = v_target(z, eps, t, model.sched)
    return v_loss(model(z_t, t, item.bundle), v)


def train(
    cfg: TrainConfig,
    dataset: Sequence[Clip] | Sequence[Prepared],
    ae: Autoencoder,
    model: VFIModel | None = None,
    on_step: Callable[[int, float], None] | None = None,
) -> tuple[VFIModel, list[float]]:
    """Diffusion training with the autoencoder frozen; returns the model and per-step losses."""
    if not dataset:
        raise ValueError("empty dataset")
    model = model or VFIModel(cfg, ae)
    items = list(dataset) if isinstance(dataset[0], Prepared) else prepare(model.ae, dataset)
    params = model.trainable()
    opt = torch.optim.AdamW(params, lr=cfg.lr, weight_decay=cfg.weight_decay)
    sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, cfg.steps) if cfg.cosine_lr else None
    gen = torch.Generator().manual_seed(cfg.seed + 1)
    curve: list[float] = []
    model.train()
    for step in range(cfg.steps):
        idx = torch.randint(0, len(items), (cfg.batch,), generator=gen).tolist()
        opt.zero_grad(set_to_none=True)
        total = 0.0
        for i in idx:
            try:
                loss = train_step_loss(model, items[i], gen) / cfg.batch
            except FloatingPointError as e:
                raise FloatingPointError(f"non-finite values at step {step}: {e}") from e
            if not torch.isfinite(loss):
                raise FloatingPointError(f"non-finite loss at step {step}")
            loss.backward()
            total += loss.item()
        opt.step()
        if sched is not None:
            sched.step()
        curve.append(total)
        if on_step is not None:
            on_step(step, total)
    model.eval()
    return model, curve


def write_loss_log(curve: Sequence[float], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "loss"])
        for i, v in enumerate(curve):
            w.writerow([i, repr(float(v))])


# --- inference ------------------------------------------------------------


@torch.no_grad()
def interpolate_bundle(model: VFIModel, bundle: ConditionBundle, first, last, steps: int, seed: int) -> Clip:
    N = bundle.n
    h, w = bundle.spatial_latents.shape[2:]
    shape = (N, model.base.latent_ch, h, w)
    cache: dict[int, ConditionFeatures] = {}

    def v_model(z_t, t):
        if t not in cache:
            cache.clear()
            cache[t] = model.condition(bundle, t)
        return model.base(z_t, t, cache[t])

    z = sample(v_model, shape, model.sched, steps, seed, clip=model.cfg.latent_clip)
    frames = model.ae.decode(z).numpy().astype(np.float32)
    frames[0] = first
    frames[-1] = last
    return Clip(frames)


def interpolate(model: VFIModel, first: np.ndarray, last: np.ndarray, N: int, steps: int, seed: int,
                depth_first=None, depth_last=None) -> Clip:
    """N-frame clip between two keyframes; frames 1 and N are the inputs verbatim."""
    if first.shape[-1] % 4 or first.shape[-2] % 4:
        raise ValueError(f"keyframe dims {first.shape[-2:]} must be divisible by 4")
    bundle = build_condition(model.ae, first, last, N, depth_first, depth_last)
    return interpolate_bundle(model, bundle, first, last, steps, seed)


def linear_blend(first: np.ndarray, last: np.ndarray, N: int) -> np.ndarray:
    t = (np.arange(N, dtype=np.float64) / (N - 1))[:, None, None, None]
    return ((1 - t) * first[None].astype(np.float64) + t * last[None].astype(np.float64)).astype(np.float32)


def repeat_first(first: np.ndarray, N: int) -> np.ndarray:
    return np.repeat(first[None], N, axis=0)


def middle_scores(pred: np.ndarray, truth: np.ndarray) -> tuple[float, float]:
    mids = range(1, truth.shape[0] - 1)
    return (float(np.mean([psnr(pred[i], truth[i]) for i in mids])),
            float(np.mean([ssim(pred[i], truth[i]) for i in mids])))


@dataclass
class EvalReport:
    per_clip: list[dict] = field(default_factory=list)
    psnr: float = float("nan")
    ssim: float = float("nan")
    baselines: dict[str, dict[str, float]] = field(default_factory=dict)

    def summary(self) -> str:
        rows = [("model", self.psnr, self.ssim)] + [(k, v["psnr"], v["ssim"]) for k, v in self.baselines.items()]
        return "\n".join(f"{name:14s} PSNR {p:7.3f} dB  SSIM {s:.4f}" for name, p, s in rows)


def evaluate(model: VFIModel, dataset: Sequence[Clip], seed: int, steps: int | None = None,
             prepared: Sequence[Prepared] | None = None) -> EvalReport:
    """Middle-frame PSNR/SSIM of the model and of the two baselines."""
    if not dataset:
        raise ValueError("empty dataset")
    steps = steps or model.cfg.steps_infer
    report = EvalReport()
    base_scores = {"repeat_first": [], "linear_blend": []}
    for k, clip in enumerate(dataset):
        N = clip.n
        bundle = prepared[k].bundle if prepared is not None else condition_for_clip(model.ae, clip)
        pred = interpolate_bundle(model, bundle, clip.first, clip.last, steps, seed + k).frames
        p, s = middle_scores(pred, clip.frames)
        rp = middle_scores(repeat_first(clip.first, N), clip.frames)
        lb = middle_scores(linear_blend(clip.first, clip.last, N), clip.frames)
        base_scores["repeat_first"].append(rp)
        base_scores["linear_blend"].append(lb)
        report.per_clip.append({"psnr": p, "ssim": s, "repeat_first": rp, "linear_blend": lb})
    report.psnr = float(np.mean([c["psnr"] for c in report.per_clip]))
    report.ssim = float(np.mean([c["ssim"] for c in report.per_clip]))
    for name, vals in base_scores.items():
        report.baselines[name] = {"psnr": float(np.mean([v[0] for v in vals])),
                                  "ssim": float(np.mean([v[1] for v in vals]))}
    return report


# --- ablation -------------------------------------------------------------

ABLATION_ROWS = {
    "baseline": dict(no_temporal=True, no_xattn=True),
    "+cross-frame attention": dict(no_temporal=True, no_xattn=False),
    "+temporal features": dict(no_temporal=False, no_xattn=True),
    "full": dict(no_temporal=False, no_xattn=False),
}


def dataset_hash(clips: Sequence[Clip]) -> str:
    h = hashlib.sha256()
    for c in clips:
        h.update(np.ascontiguousarray(c.frames, dtype="<f4").tobytes())
    return h.hexdigest()


def ablate(cfg: TrainConfig, train_set: Sequence[Clip], eval_set: Sequence[Clip], ae: Autoencoder,
           on_row: Callable[[str], None] | None = None) -> list[dict]:
    """Train and evaluate the four component rows under one seed and dataset."""
    rows = []
    train_items = prepare(ae, train_set)
    eval_items = prepare(ae, eval_set)
    for name, flags in ABLATION_ROWS.items():
        if on_row is not None:
            on_row(name)
        row_cfg = dataclasses.replace(cfg, **flags)
        model, curve = train(row_cfg, train_items, ae)
        report = evaluate(model, eval_set, cfg.seed, prepared=eval_items)
        rows.append(
            dict(
                name=name,
                flags=flags,
                params=model.active_parameter_count(),
                final_loss=float(np.mean(curve[-50:])) if curve else float("nan"),
                psnr=report.psnr,
                ssim=report.ssim,
                train_hash=dataset_hash(train_set),
                eval_hash=dataset_hash(eval_set),
                report=report,
            )
        )
    return rows


def format_ablation(rows: Sequence[dict]) -> str:
    head = f"{'row':24s} {'params':>9s} {'loss':>9s} {'PSNR':>8s} {'SSIM':>7s}"
    lines = [head, "-" * len(head)]
    for r in rows:
        lines.append(f"{r['name']:24s} {r['params']:9d} {r['final_loss']:9.5f} {r['psnr']:8.3f} {r['ssim']:7.4f}")
    if rows:
        lines.append(f"dataset {rows[0]['train_hash'][:12]} / eval {rows[0]['eval_hash'][:12]}")
    return "\n".join(lines)


# --- checkpoints ----------------------------------------------------------


def _state(module: nn.Module) -> dict[str, torch.Tensor]:
    return {k: v for k, v in module.state_dict().items()}


def save_checkpoint(model: VFIModel, path) -> None:
    sched = {"alpha": model.sched.alpha, "sigma": model.sched.sigma}
    ckpt.write_checkpoint(
        path,
        {
            "autoencoder": ckpt.pack_tensors(_state(model.ae)),
            "denoiser": ckpt.pack_tensors(_state(model.base)),
            "condencoder": ckpt.pack_tensors(_state(model.cond)),
            "schedule": ckpt.pack_tensors(sched),
            "config": ckpt.pack_config(model.cfg.to_dict()),
        },
    )


def save_autoencoder(ae: Autoencoder, cfg: TrainConfig, path) -> None:
    """Autoencoder-only checkpoint (denoiser sections left empty)."""
    sched = make_schedule(cfg.T)
    ckpt.write_checkpoint(
        path,
        {
            "autoencoder": ckpt.pack_tensors(_state(ae)),
            "denoiser": ckpt.pack_tensors({}),
            "condencoder": ckpt.pack_tensors({}),
            "schedule": ckpt.pack_tensors({"alpha": sched.alpha, "sigma": sched.sigma}),
            "config": ckpt.pack_config(cfg.to_dict()),
        },
    )


def load_autoencoder(path) -> Autoencoder:
    sections = ckpt.read_checkpoint(path)
    ae = Autoencoder()
    ae.load_state_dict(ckpt.unpack_tensors(sections["autoencoder"]))
    ae.eval()
    for p in ae.parameters():
        p.requires_grad_(False)
    return ae


def load_checkpoint(path) -> VFIModel:
    sections = ckpt.read_checkpoint(path)
    cfg = TrainConfig.from_dict(ckpt.unpack_config(sections["config"]))
    ae = Autoencoder()
    ae.load_state_dict(ckpt.unpack_tensors(sections["autoencoder"]))
    model = VFIModel(cfg, ae)
    base_state = ckpt.unpack_tensors(sections["denoiser"])
    if not base_state:
        raise ckpt.CheckpointError("checkpoint has no denoiser weights (autoencoder-only?)")
    model.base.load_state_dict(base_state)
    model.cond.load_state_dict(ckpt.unpack_tensors(sections["condencoder"]))
    sched = ckpt.unpack_tensors(sections["schedule"])
    if not (np.array_equal(sched["alpha"].numpy(), model.sched.alpha)
            and np.array_equal(sched["sigma"].numpy(), model.sched.sigma)):
        raise ckpt.CheckpointError("stored schedule does not match the configured one")
    model.eval()
    return model
