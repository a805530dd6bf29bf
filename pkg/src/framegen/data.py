"""Synthetic large-motion clips, the VFIC clip container, PPM export and PSNR/SSIM.

Geometry is integer-only (positions, masks, displacements) so a seed yields
the same clip on any platform. Textures come from random colour lattices
upsampled bilinearly with rational weights.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

GRAY_WEIGHTS = np.array([0.299, 0.587, 0.114])

VFIC_MAGIC = b"VFIC"
VFIC_VERSION = 1
VFIC_HEADER = struct.Struct("<4sIIIIIB")


@dataclass
class Clip:
    frames: np.ndarray  # float32 [N, C, H, W]
    meta: dict | None = None

    def __post_init__(self):
        if self.frames.ndim != 4:
            raise ValueError(f"clip frames must be 4-D, got shape {self.frames.shape}")
        if self.frames.shape[0] < 2 and self.frames.shape[1] == 3:
            raise ValueError("a clip needs at least 2 frames")

    @property
    def n(self) -> int:
        return self.frames.shape[0]

    @property
    def first(self) -> np.ndarray:
        return self.frames[0]

    @property
    def last(self) -> np.ndarray:
        return self.frames[-1]


@dataclass(frozen=True)
class SceneConfig:
    n_objects: int = 2
    shapes: tuple[str, ...] = ("rect", "disc")
    # total displacement between the two keyframes, as a fraction of width
    velocity_range: tuple[float, float] = (0.25, 0.25)
    trajectory: str = "linear"
    texture_seed: int | None = None
    max_displacement: float = 0.25
    size_range: tuple[int, int] = (12, 20)

    def __post_init__(self):
        if not 0 < self.max_displacement <= 0.5:
            raise ValueError("max_displacement must lie in (0, 0.5]")
        lo, hi = self.velocity_range
        if not 0 <= lo <= hi <= self.max_displacement:
            raise ValueError("velocity_range must satisfy 0 <= lo <= hi <= max_displacement")
        if self.trajectory not in ("linear", "quadratic"):
            raise ValueError(f"unknown trajectory {self.trajectory!r}")
        for s in self.shapes:
            if s not in ("rect", "disc"):
                raise ValueError(f"unknown shape kind {s!r}")


def lattice_texture(rng: np.random.Generator, h: int, w: int, cell: int) -> np.ndarray:
    """[3,h,w] texture: random colours on a ``cell``-spaced lattice, bilinear in between."""
    gh, gw = h // cell + 2, w // cell + 2
    grid = rng.integers(20, 236, size=(3, gh, gw)).astype(np.float64) / 255.0
    ys, xs = np.arange(h), np.arange(w)
    y0, x0 = ys // cell, xs // cell
    fy = ((ys % cell) / cell)[:, None]
    fx = ((xs % cell) / cell)[None, :]
    g00 = grid[:, y0][:, :, x0]
    g01 = grid[:, y0][:, :, x0 + 1]
    g10 = grid[:, y0 + 1][:, :, x0]
    g11 = grid[:, y0 + 1][:, :, x0 + 1]
    top = g00 * (1 - fx) + g01 * fx
    bot = g10 * (1 - fx) + g11 * fx
    return top * (1 - fy) + bot * fy


def _shape_mask(kind: str, size: int) -> np.ndarray:
    if kind == "rect":
        return np.ones((size, size), dtype=bool)
    r = size // 2
    yy, xx = np.mgrid[0:size, 0:size]
    c = size - 1  # twice the centre coordinate, keeps the test in integers
    return (2 * yy - c) ** 2 + (2 * xx - c) ** 2 <= (2 * r) ** 2


def _offset(total: int, i: int, n: int, trajectory: str) -> int:
    """Integer displacement at frame i (0-based) of n, rounded half up."""
    if trajectory == "linear":
        num, den = total * i, n - 1
    else:
        num, den = total * i * i, (n - 1) ** 2
    return (2 * num + den) // (2 * den)


def _pick_displacement(rng: np.random.Generator, magnitude: int) -> tuple[int, int]:
    dx = int(rng.integers(-magnitude, magnitude + 1))
    dy = math.isqrt(magnitude * magnitude - dx * dx)
    if rng.integers(0, 2):
        dy = -dy
    return dx, dy


def gen_clip(cfg: SceneConfig, N: int, H: int, W: int, seed: int) -> Clip:
    if H % 4 or W % 4 or H < 16 or W < 16:
        raise ValueError(f"frame dims must be multiples of 4 and >= 16, got {H}x{W}")
    if N < 2:
        raise ValueError("N must be >= 2")
    rng = np.random.default_rng(seed)
    tex_rng = rng if cfg.texture_seed is None else np.random.default_rng(cfg.texture_seed)
    background = lattice_texture(tex_rng, H, W, cell=16)

    objects = []
    for k in range(cfg.n_objects):
        kind = cfg.shapes[int(rng.integers(0, len(cfg.shapes)))]
        size = int(rng.integers(cfg.size_range[0], cfg.size_range[1] + 1))
        lo, hi = cfg.velocity_range
        frac = lo if lo == hi else float(rng.uniform(lo, hi))
        mag = int(round(frac * W))
        dx, dy = _pick_displacement(rng, mag)
        offs = [(_offset(dx, i, N, cfg.trajectory), _offset(dy, i, N, cfg.trajectory)) for i in range(N)]
        ox = [o[0] for o in offs]
        oy = [o[1] for o in offs]
        x_lo, x_hi = -min(ox), W - size - max(ox)
        y_lo, y_hi = -min(oy), H - size - max(oy)
        if x_hi < x_lo or y_hi < y_lo:
            raise ValueError("object trajectory does not fit in the frame")
        x0 = int(rng.integers(x_lo, x_hi + 1))
        y0 = int(rng.integers(y_lo, y_hi + 1))
        tex = lattice_texture(tex_rng, size, size, cell=6)
        # push the object away from the background's mid-tones
        tex = np.clip(0.5 + 1.6 * (tex - 0.5), 0.0, 1.0)
        objects.append(
            dict(
                kind=kind,
                size=size,
                mask=_shape_mask(kind, size),
                texture=tex,
                positions=[(x0 + a, y0 + b) for a, b in offs],
                displacement=(offs[-1][0], offs[-1][1]),
            )
        )

    frames = np.empty((N, 3, H, W), dtype=np.float32)
    layers = np.zeros((N, H, W), dtype=np.int8)
    for i in range(N):
        img = background.copy()
        for k, obj in enumerate(objects, start=1):
            x, y = obj["positions"][i]
            s = obj["size"]
            m = obj["mask"]
            region = img[:, y : y + s, x : x + s]
            region[:, m] = obj["texture"][:, m]
            layers[i, y : y + s, x : x + s][m] = k
        frames[i] = img.astype(np.float32)

    flow_fwd = np.zeros((2, H, W), dtype=np.float32)
    flow_bwd = np.zeros((2, H, W), dtype=np.float32)
    for k, obj in enumerate(objects, start=1):
        dx, dy = obj["displacement"]
        flow_fwd[0][layers[0] == k] = dx
        flow_fwd[1][layers[0] == k] = dy
        flow_bwd[0][layers[-1] == k] = -dx
        flow_bwd[1][layers[-1] == k] = -dy

    meta = {
        "layers": layers,
        "n_layers": cfg.n_objects + 1,
        "positions": np.array([o["positions"] for o in objects], dtype=np.int64).transpose(1, 0, 2)
        if objects
        else np.zeros((N, 0, 2), dtype=np.int64),
        "sizes": [o["size"] for o in objects],
        "kinds": [o["kind"] for o in objects],
        "flow_forward": flow_fwd,
        "flow_backward": flow_bwd,
    }
    return Clip(frames, meta)


def gen_dataset(cfg: SceneConfig, count: int, N: int, H: int, W: int, seed: int) -> list[Clip]:
    seeds = np.random.SeedSequence(seed).generate_state(count)
    return [gen_clip(cfg, N, H, W, int(s)) for s in seeds]


# --- VFIC container -------------------------------------------------------


class ClipFormatError(ValueError):
    pass


class BadMagicError(ClipFormatError):
    pass


class UnknownVersionError(ClipFormatError):
    pass


class TruncatedPayloadError(ClipFormatError):
    pass


def encode_clip(frames: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(frames, dtype="<f4")
    if arr.ndim != 4:
        raise ValueError(f"expected [N,C,H,W], got shape {arr.shape}")
    n, c, h, w = arr.shape
    return VFIC_HEADER.pack(VFIC_MAGIC, VFIC_VERSION, n, h, w, c, 0) + arr.tobytes()


def decode_clip(buf: bytes) -> np.ndarray:
    if len(buf) < 4 or buf[:4] != VFIC_MAGIC:
        raise BadMagicError(f"bad magic {buf[:4]!r}, expected {VFIC_MAGIC!r}")
    if len(buf) < VFIC_HEADER.size:
        raise TruncatedPayloadError("header is truncated")
    _, version, n, h, w, c, dtype = VFIC_HEADER.unpack_from(buf)
    if version != VFIC_VERSION:
        raise UnknownVersionError(f"unknown VFIC version {version}")
    if dtype != 0:
        raise ClipFormatError(f"unknown dtype code {dtype}")
    expected = n * c * h * w * 4
    payload = buf[VFIC_HEADER.size :]
    if len(payload) < expected:
        raise TruncatedPayloadError(f"payload has {len(payload)} bytes, header implies {expected}")
    if len(payload) > expected:
        raise ClipFormatError(f"{len(payload) - expected} trailing bytes after payload")
    return np.frombuffer(payload, dtype="<f4").reshape(n, c, h, w).astype(np.float32)


def write_clip(clip: Clip | np.ndarray, path) -> None:
    frames = clip.frames if isinstance(clip, Clip) else clip
    Path(path).write_bytes(encode_clip(frames))


def read_clip(path) -> Clip:
    return Clip(decode_clip(Path(path).read_bytes()))


def export_ppm(frame: np.ndarray, path) -> None:
    """Write a [3,H,W] frame in [0,1] as binary P6."""
    f = np.asarray(frame, dtype=np.float64)
    if f.ndim != 3 or f.shape[0] != 3:
        raise ValueError(f"expected [3,H,W], got {f.shape}")
    if f.min() < 0 or f.max() > 1:
        raise ValueError("frame values must lie in [0, 1]")
    _, h, w = f.shape
    pixels = np.floor(f * 255.0 + 0.5).astype(np.uint8).transpose(1, 2, 0)
    Path(path).write_bytes(f"P6\n{w} {h}\n255\n".encode("ascii") + pixels.tobytes())


# --- metrics --------------------------------------------------------------

PSNR_CAP = 99.0


def to_gray(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 3 and img.shape[0] == 3:
        return np.tensordot(GRAY_WEIGHTS, img, axes=1)
    if img.ndim == 3 and img.shape[0] == 1:
        return img[0]
    if img.ndim == 2:
        return img
    raise ValueError(f"cannot convert shape {img.shape} to grayscale")


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    err = np.mean((a - b) ** 2)
    if err == 0:
        return PSNR_CAP
    return min(PSNR_CAP, float(10.0 * np.log10(1.0 / err)))


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    ax = np.arange(size, dtype=np.float64) - (size - 1) / 2
    g = np.exp(-(ax**2) / (2 * sigma**2))
    g /= g.sum()
    return np.outer(g, g)


SSIM_K1, SSIM_K2, SSIM_L = 0.01, 0.03, 1.0


def ssim(a: np.ndarray, b: np.ndarray, win: int = 11, sigma: float = 1.5) -> float:
    """Mean SSIM over all fully-contained gaussian windows (no padding)."""
    x, y = to_gray(a), to_gray(b)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {y.shape}")
    if x.shape[0] < win or x.shape[1] < win:
        raise ValueError(f"image {x.shape} smaller than the {win}x{win} window")
    w = gaussian_window(win, sigma)

    def filt(img):
        views = np.lib.stride_tricks.sliding_window_view(img, (win, win))
        return np.einsum("ijkl,kl->ij", views, w)

    c1 = (SSIM_K1 * SSIM_L) ** 2
    c2 = (SSIM_K2 * SSIM_L) ** 2
    mx, my = filt(x), filt(y)
    vx = filt(x * x) - mx**2
    vy = filt(y * y) - my**2
    cxy = filt(x * y) - mx * my
    num = (2 * mx * my + c1) * (2 * cxy + c2)
    den = (mx**2 + my**2 + c1) * (vx + vy + c2)
    return float(np.mean(num / den))
