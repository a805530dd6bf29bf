"""Block-matching optical flow, a depth oracle and the temporal-branch input stack."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import to_gray

STACK_CHANNELS = ("flow_fwd_x", "flow_fwd_y", "flow_bwd_x", "flow_bwd_y", "depth_first", "depth_last", "time")


@dataclass(frozen=True)
class FlowConfig:
    levels: int = 3
    block: int = 8
    radius: int = 8  # search radius at the coarsest level
    refine: int = 2  # search radius at every finer level

    @property
    def bound(self) -> int:
        """Largest displacement component, in full-res pixels: radius x pyramid factor."""
        return self.radius * 2 ** (self.levels - 1)


def _downsample(img: np.ndarray) -> np.ndarray:
    h, w = img.shape
    img = img[: h - h % 2, : w - w % 2]
    return 0.25 * (img[0::2, 0::2] + img[1::2, 0::2] + img[0::2, 1::2] + img[1::2, 1::2])


def _candidates(radius: int) -> np.ndarray:
    """All (dy, dx) in the square, ordered by |d|^2 then (dy, dx) so argmin breaks ties."""
    r = np.arange(-radius, radius + 1)
    dy, dx = np.meshgrid(r, r, indexing="ij")
    cand = np.stack([dy.ravel(), dx.ravel()], axis=1)
    order = np.lexsort((cand[:, 1], cand[:, 0], (cand**2).sum(1)))
    return cand[order]


def _match_level(
    a: np.ndarray, b: np.ndarray, seeds: list[np.ndarray], radius: int, block: int, bound: int
) -> np.ndarray:
    """Search around each per-block seed [by,bx,2] (dy,dx) by SAD with wraparound; best over all seeds."""
    h, w = a.shape
    nby, nbx = seeds[0].shape[:2]
    ys = (np.arange(nby) * block)[:, None, None, None] + np.arange(block)[None, None, :, None]
    xs = (np.arange(nbx) * block)[None, :, None, None] + np.arange(block)[None, None, None, :]
    ref = a[ys, xs]  # [nby, nbx, block, block]
    best_cost = np.full((nby, nbx), np.inf)
    best_disp = seeds[0].copy()
    best_key = np.full((nby, nbx, 3), np.iinfo(np.int64).max, dtype=np.int64)
    for init, (dy, dx) in ((s, d) for s in seeds for d in _candidates(radius)):
        disp = init + np.array([dy, dx])
        ty = (ys + disp[:, :, 0][:, :, None, None]) % h
        tx = (xs + disp[:, :, 1][:, :, None, None]) % w
        cost = np.abs(ref - b[ty, tx]).sum(axis=(2, 3))
        cost = np.where(np.abs(disp).max(-1) > bound, np.inf, cost)
        key = np.stack([(disp**2).sum(-1), disp[..., 0], disp[..., 1]], axis=-1)
        better = cost < best_cost
        tie = (cost == best_cost) & _lex_less(key, best_key)
        take = better | tie
        best_cost = np.where(take, cost, best_cost)
        best_disp = np.where(take[..., None], disp, best_disp)
        best_key = np.where(take[..., None], key, best_key)
    return best_disp


def _lex_less(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    out = np.zeros(a.shape[:-1], dtype=bool)
    decided = np.zeros(a.shape[:-1], dtype=bool)
    for k in range(a.shape[-1]):
        lt = a[..., k] < b[..., k]
        gt = a[..., k] > b[..., k]
        out |= ~decided & lt
        decided |= lt | gt
    return out


def _resize_blocks(disp: np.ndarray, nby: int, nbx: int) -> np.ndarray:
    """Nearest-neighbour map of a coarse block grid onto the next level's grid, displacements doubled."""
    iy = np.minimum(np.arange(nby) // 2, disp.shape[0] - 1)
    ix = np.minimum(np.arange(nbx) // 2, disp.shape[1] - 1)
    return 2 * disp[iy][:, ix]


def estimate_flow(a: np.ndarray, b: np.ndarray, cfg: FlowConfig = FlowConfig()) -> np.ndarray:
    """Dense flow [2,H,W] as (dx, dy) in pixels, taking ``a`` to ``b``.

    Each pixel carries the displacement of its 8x8 block; pixels past the
    last whole block copy the nearest block.
    """
    ga, gb = to_gray(a), to_gray(b)
    if ga.shape != gb.shape:
        raise ValueError(f"frame shapes differ: {ga.shape} vs {gb.shape}")
    H, W = ga.shape
    coarse = 2 ** (cfg.levels - 1)
    if H // coarse < cfg.block or W // coarse < cfg.block:
        raise ValueError(
            f"{H}x{W} frame is smaller than one {cfg.block}x{cfg.block} block at pyramid level {cfg.levels - 1}"
        )
    pyr_a, pyr_b = [ga], [gb]
    for _ in range(cfg.levels - 1):
        pyr_a.append(_downsample(pyr_a[-1]))
        pyr_b.append(_downsample(pyr_b[-1]))

    disp = None
    for level in range(cfg.levels - 1, -1, -1):
        la, lb = pyr_a[level], pyr_b[level]
        nby, nbx = la.shape[0] // cfg.block, la.shape[1] // cfg.block
        if disp is None:
            seeds = [np.zeros((nby, nbx, 2), dtype=np.int64)]
            radius = cfg.radius
        else:
            # the zero-motion seed recovers static regions that a coarse block mismatched
            seeds = [_resize_blocks(disp, nby, nbx), np.zeros((nby, nbx, 2), dtype=np.int64)]
            radius = cfg.refine
        disp = _match_level(la, lb, seeds, radius, cfg.block, cfg.radius * 2 ** (cfg.levels - 1 - level))

    iy = np.minimum(np.arange(H) // cfg.block, disp.shape[0] - 1)
    ix = np.minimum(np.arange(W) // cfg.block, disp.shape[1] - 1)
    dense = disp[iy][:, ix]  # [H, W, 2] as (dy, dx)
    return np.stack([dense[..., 1], dense[..., 0]]).astype(np.float32)


def block_flows(flow: np.ndarray, block: int = 8) -> np.ndarray:
    """One (dx, dy) sample per block (its top-left pixel), shape [n_blocks, 2]."""
    return flow[:, ::block, ::block].reshape(2, -1).T


def median_flow(flow: np.ndarray, block: int = 8) -> tuple[float, float]:
    med = np.median(block_flows(flow, block), axis=0)
    return float(med[0]), float(med[1])


def bidirectional_flow(first: np.ndarray, last: np.ndarray, cfg: FlowConfig = FlowConfig()):
    return estimate_flow(first, last, cfg), estimate_flow(last, first, cfg)


def depth_map(frame: np.ndarray, layers: np.ndarray | None = None, n_layers: int | None = None) -> np.ndarray:
    """Depth [1,H,W] in [0,1], near = 1.

    With generator layer indices the map is ``layer / (n_layers - 1)``.
    Otherwise grayscale intensity rescaled to [0,1] stands in for depth
    (a flat frame maps to 0.5).
    """
    if layers is not None:
        top = max((n_layers or int(layers.max()) + 1) - 1, 1)
        return (layers.astype(np.float64) / top)[None].astype(np.float32)
    g = to_gray(frame)
    lo, hi = g.min(), g.max()
    if hi == lo:
        return np.full((1,) + g.shape, 0.5, dtype=np.float32)
    return ((g - lo) / (hi - lo))[None].astype(np.float32)


def build_temporal_stack(
    flow_fwd: np.ndarray,
    flow_bwd: np.ndarray,
    depth_first: np.ndarray,
    depth_last: np.ndarray,
    N: int,
) -> np.ndarray:
    """Tile keyframe motion over N frames plus a time channel: [N, 7, H, W]."""
    if N < 3:
        raise ValueError(f"temporal stack needs N >= 3, got {N}")
    _, H, W = flow_fwd.shape
    per_frame = np.concatenate(
        [flow_fwd / W, flow_bwd / W, depth_first.reshape(1, H, W), depth_last.reshape(1, H, W)]
    ).astype(np.float32)
    stack = np.empty((N, 7, H, W), dtype=np.float32)
    stack[:, :6] = per_frame
    stack[:, 6] = (np.arange(N, dtype=np.float32) / np.float32(N - 1))[:, None, None]
    return stack


def unpack_temporal_stack(stack: np.ndarray) -> dict[str, np.ndarray]:
    """Inverse of :func:`build_temporal_stack` for frame 0 (flows back in pixels)."""
    W = stack.shape[-1]
    f = stack[0]
    return {
        "flow_fwd": f[0:2] * np.float32(W),
        "flow_bwd": f[2:4] * np.float32(W),
        "depth_first": f[4:5],
        "depth_last": f[5:6],
        "time": stack[:, 6, 0, 0],
    }
