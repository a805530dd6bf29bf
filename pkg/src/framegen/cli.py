"""``framegen`` command line: data generation, training, interpolation, evaluation, ablation, grad checks.

Exit codes: 0 success, 1 usage error, 2 runtime error.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from . import pipeline as P
from .data import Clip, SceneConfig, decode_clip, encode_clip, export_ppm, gen_dataset
from .motion import depth_map

ABLATE_FLAGS = ("no_temporal", "no_xattn")


class UsageError(Exception):
    pass


@dataclass
class CliConfig:
    n_frames: int = 9
    height: int = 64
    width: int = 64
    timesteps: int = 1000
    steps_infer: int = 20
    lr: float = 1e-4
    batch: int = 1
    train_steps: int = 2000
    seed: int = 0
    ablate: tuple[str, ...] = ()  # subset of ABLATE_FLAGS; empty = full model
    freeze_base: bool = False
    paths: str = "."  # artifact directory when --out is absent: outputs and default ae/model checkpoints

    def validate(self) -> None:
        if self.n_frames < 3:
            raise ValueError("n_frames must be >= 3")
        for name in ("height", "width"):
            v = getattr(self, name)
            if v < 32 or v % 8:
                raise ValueError(f"{name} must be a multiple of 8 and >= 32, got {v}")
        if self.timesteps < 2:
            raise ValueError("timesteps must be >= 2")
        if self.steps_infer < 1 or self.steps_infer > self.timesteps:
            raise ValueError(f"steps_infer must lie in [1, timesteps], got {self.steps_infer}")
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if self.batch < 1 or self.train_steps < 0 or self.seed < 0:
            raise ValueError("batch >= 1, train_steps >= 0 and seed >= 0 are required")

    def train_config(self) -> P.TrainConfig:
        return P.TrainConfig(
            T=self.timesteps,
            lr=self.lr,
            batch=self.batch,
            steps=self.train_steps,
            seed=self.seed,
            no_temporal="no_temporal" in self.ablate,
            no_xattn="no_xattn" in self.ablate,
            freeze_base=self.freeze_base,
            N=self.n_frames,
            H=self.height,
            W=self.width,
            steps_infer=self.steps_infer,
        )


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_ablate(text) -> tuple[str, ...]:
    if isinstance(text, tuple):
        return text
    items = [s.strip() for s in str(text).split(",") if s.strip() and s.strip() != "none"]
    for s in items:
        if s not in ABLATE_FLAGS:
            raise ValueError(f"unknown ablation flag {s!r} (choose from {', '.join(ABLATE_FLAGS)})")
    return tuple(sorted(set(items)))


_FIELDS = {f.name: f for f in dataclasses.fields(CliConfig)}
_PARSERS = {
    "n_frames": int, "height": int, "width": int, "timesteps": int, "steps_infer": int,
    "lr": float, "batch": int, "train_steps": int, "seed": int,
    "ablate": _parse_ablate, "freeze_base": _parse_bool, "paths": str,
}


def load_config(path: str | os.PathLike | None, overrides: dict | None = None) -> CliConfig:
    """Defaults, then ``key = value`` lines from ``path``, then non-None ``overrides``."""
    values: dict = {}
    if path is not None:
        for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key = value, got {raw.strip()!r}")
            key, val = (s.strip() for s in line.split("=", 1))
            if key not in _FIELDS:
                raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
            try:
                values[key] = _PARSERS[key](val)
            except ValueError as e:
                raise ValueError(f"{path}:{lineno}: bad value for {key}: {e}") from None
    for key, val in (overrides or {}).items():
        if val is None:
            continue
        if key not in _FIELDS:
            raise ValueError(f"unknown config key {key!r}")
        values[key] = _PARSERS[key](val) if isinstance(val, str) else val
    cfg = CliConfig(**values)
    cfg.validate()
    return cfg


# --- dataset directories --------------------------------------------------


def write_dataset(clips: Sequence[Clip], out: Path) -> list[Path]:
    """``clip_XXXX.vfic`` frames plus ``clip_XXXX.depth.vfic`` layer depth per clip."""
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, c in enumerate(clips):
        p = out / f"clip_{i:04d}.vfic"
        p.write_bytes(encode_clip(c.frames))
        depth = np.stack([depth_map(f, l, c.meta["n_layers"]) for f, l in zip(c.frames, c.meta["layers"])])
        (out / f"clip_{i:04d}.depth.vfic").write_bytes(encode_clip(depth))
        paths.append(p)
    return paths


def read_dataset(directory: Path) -> list[Clip]:
    files = sorted(p for p in Path(directory).glob("*.vfic") if not p.name.endswith(".depth.vfic"))
    if not files:
        raise FileNotFoundError(f"no .vfic clips in {directory}")
    clips = []
    for p in files:
        meta = None
        d = p.with_name(p.stem + ".depth.vfic")
        if d.exists():
            meta = {"depth": decode_clip(d.read_bytes())}
        clips.append(Clip(decode_clip(p.read_bytes()), meta))
    return clips


# --- subcommands ----------------------------------------------------------


def _out(args, cfg: CliConfig) -> Path:
    out = Path(args.out or cfg.paths)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_gen_data(args, cfg: CliConfig) -> None:
    scene = SceneConfig(trajectory=args.trajectory)
    clips = gen_dataset(scene, args.clips, cfg.n_frames, cfg.height, cfg.width, cfg.seed)
    paths = write_dataset(clips, _out(args, cfg))
    print(f"wrote {len(paths)} clips to {_out(args, cfg)}")


def cmd_train_ae(args, cfg: CliConfig) -> None:
    clips = read_dataset(Path(args.data))
    tc = dataclasses.replace(cfg.train_config(), ae_steps=args.ae_steps)
    ae, curve = P.pretrain_autoencoder(clips, tc, log_fn=lambda s, l: print(f"ae step {s} loss {l:.5f}"))
    out = _out(args, cfg)
    P.save_autoencoder(ae, tc, out / "ae.vfck")
    P.write_loss_log(curve, out / "ae_loss.csv")
    print(f"saved {out / 'ae.vfck'}")


def _ae_path(args, cfg) -> Path:
    return Path(args.ae) if args.ae else Path(args.out or cfg.paths) / "ae.vfck"


def _ckpt_path(args, cfg) -> Path:
    return Path(args.ckpt) if args.ckpt else Path(args.out or cfg.paths) / "model.vfck"


def cmd_train(args, cfg: CliConfig) -> None:
    clips = read_dataset(Path(args.data))
    ae = P.load_autoencoder(_ae_path(args, cfg))
    tc = cfg.train_config()

    def log(step, loss):
        if step % 100 == 0 or step == tc.steps - 1:
            print(f"step {step} loss {loss:.5f}", flush=True)

    model, curve = P.train(tc, clips, ae, on_step=log)
    out = _out(args, cfg)
    P.save_checkpoint(model, out / "model.vfck")
    P.write_loss_log(curve, out / "loss.csv")
    print(f"saved {out / 'model.vfck'}")


def _keyframe(path: str, index: int) -> np.ndarray:
    frames = decode_clip(Path(path).read_bytes())
    if frames.shape[1] != 3:
        raise ValueError(f"{path}: expected 3-channel frames, got {frames.shape[1]}")
    return frames[index]


def cmd_interpolate(args, cfg: CliConfig) -> None:
    model = P.load_checkpoint(_ckpt_path(args, cfg))
    first, last = _keyframe(args.first, 0), _keyframe(args.last, -1)
    if first.shape != last.shape:
        raise ValueError(f"keyframes differ in shape: {first.shape} vs {last.shape}")
    n = args.n or cfg.n_frames
    clip = P.interpolate(model, first, last, n, cfg.steps_infer, cfg.seed)
    out = _out(args, cfg)
    (out / "interp.vfic").write_bytes(encode_clip(clip.frames))
    if args.ppm:
        for i, f in enumerate(clip.frames):
            export_ppm(np.clip(f, 0, 1), out / f"frame_{i:03d}.ppm")
    print(f"wrote {n} frames to {out / 'interp.vfic'}")


def cmd_eval(args, cfg: CliConfig) -> None:
    model = P.load_checkpoint(_ckpt_path(args, cfg))
    report = P.evaluate(model, read_dataset(Path(args.data)), cfg.seed, steps=cfg.steps_infer)
    print(report.summary())
    out = _out(args, cfg)
    (out / "eval.json").write_text(
        json.dumps({"psnr": report.psnr, "ssim": report.ssim, "baselines": report.baselines,
                    "per_clip": report.per_clip}, indent=2)
    )


def cmd_ablate(args, cfg: CliConfig) -> None:
    train_set = read_dataset(Path(args.data))
    eval_set = read_dataset(Path(args.eval_data))
    ae = P.load_autoencoder(_ae_path(args, cfg))
    rows = P.ablate(cfg.train_config(), train_set, eval_set, ae, on_row=lambda n: print(f"row: {n}", flush=True))
    table = P.format_ablation(rows)
    print(table)
    (_out(args, cfg) / "ablation.txt").write_text(table + "\n")


def cmd_gradcheck(args, cfg: CliConfig) -> int:
    from .gradsuite import TOLERANCE, run_all

    reports = run_all(log=print)
    return 0 if all(r.passed(TOLERANCE) for r in reports.values()) else 2


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train-ae": cmd_train_ae,
    "train": cmd_train,
    "interpolate": cmd_interpolate,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "gradcheck": cmd_gradcheck,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value config file")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="output directory (default: the paths key)")
    common.add_argument("--threads", type=int, help="torch threads (default $FRAMEGEN_THREADS or 1)")
    common.add_argument("--n-frames", dest="n_frames", type=int)
    common.add_argument("--height", type=int)
    common.add_argument("--width", type=int)
    common.add_argument("--timesteps", type=int)
    common.add_argument("--steps-infer", dest="steps_infer", type=int)
    common.add_argument("--lr", type=float)
    common.add_argument("--batch", type=int)
    common.add_argument("--train-steps", dest="train_steps", type=int)
    common.add_argument("--ablate", help="comma-separated subset of no_temporal,no_xattn")
    common.add_argument("--freeze-base", dest="freeze_base", action="store_true", default=None)
    common.add_argument("--paths")

    parser = _Parser(prog="framegen", description="Keyframe video interpolation with latent diffusion (toy scale).")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    p = sub.add_parser("gen-data", parents=[common], help="generate synthetic clips")
    p.add_argument("--clips", type=int, default=8)
    p.add_argument("--trajectory", choices=("linear", "quadratic"), default="linear")
    p = sub.add_parser("train-ae", parents=[common], help="pre-train the autoencoder")
    p.add_argument("--data", required=True)
    p.add_argument("--ae-steps", type=int, default=1500)
    p = sub.add_parser("train", parents=[common], help="train the diffusion model")
    p.add_argument("--data", required=True)
    p.add_argument("--ae")
    p = sub.add_parser("interpolate", parents=[common], help="fill frames between two keyframes")
    p.add_argument("--first", required=True)
    p.add_argument("--last", required=True)
    p.add_argument("--n", type=int)
    p.add_argument("--ckpt")
    p.add_argument("--ppm", action="store_true", help="also export every frame as PPM")
    p = sub.add_parser("eval", parents=[common], help="middle-frame PSNR/SSIM against baselines")
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt")
    p = sub.add_parser("ablate", parents=[common], help="four-row component ablation")
    p.add_argument("--data", required=True)
    p.add_argument("--eval-data", required=True)
    p.add_argument("--ae")
    sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient suites")
    return parser


def _threads(args) -> int:
    if args.threads is not None:
        return args.threads
    env = os.environ.get("FRAMEGEN_THREADS")
    if env is None:
        return 1
    try:
        return int(env)
    except ValueError:
        raise UsageError(f"FRAMEGEN_THREADS must be an integer, got {env!r}") from None


def run(argv: Sequence[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        overrides = {k: getattr(args, k, None) for k in _FIELDS}
        try:
            cfg = load_config(args.config, overrides)
        except (OSError, ValueError) as e:
            raise UsageError(str(e)) from None
        threads = _threads(args)
        if threads < 1:
            raise UsageError("--threads must be >= 1")
    except UsageError as e:
        print(e, file=sys.stderr)
        return 1
    torch.set_num_threads(threads)
    torch.manual_seed(cfg.seed)
    try:
        code = COMMANDS[args.command](args, cfg)
    except (OSError, ValueError, ArithmeticError, RuntimeError, KeyError) as e:
        print(f"framegen {args.command}: {type(e).__name__}: {e}", file=sys.stderr)
        return 2
    return code or 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
