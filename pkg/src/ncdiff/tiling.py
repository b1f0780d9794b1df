"""Overlapping-patch inference with linear cross-fade blending."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable

import torch


class TileError(RuntimeError):
    def __init__(self, offset, exc):
        super().__init__(f"tile at (y={offset[0]}, x={offset[1]}) failed: {exc}")
        self.offset = offset


@dataclass(frozen=True)
class TilePlan:
    height: int
    width: int
    patch: int
    overlap: int
    tiles: tuple  # (y, x) top-left offsets, row-major

    @property
    def stride(self) -> int:
        return self.patch - self.overlap

    @property
    def tile_h(self) -> int:
        return min(self.patch, self.height)

    @property
    def tile_w(self) -> int:
        return min(self.patch, self.width)

    def __len__(self):
        return len(self.tiles)


def _axis_offsets(dim: int, patch: int, stride: int) -> list:
    if dim <= patch:
        return [0]
    offs = list(range(0, dim - patch + 1, stride))
    if offs[-1] + patch < dim:
        offs.append(dim - patch)
    return offs


def plan_tiles(h: int, w: int, patch: int = 256, overlap: int = 64) -> TilePlan:
    """Row-major tile offsets; the last tile on each axis is clamped to end at the border.

    An axis no longer than ``patch`` gets a single tile spanning it.
    """
    if overlap < 0 or patch <= overlap:
        raise ValueError(f"need patch > overlap >= 0, got patch={patch}, overlap={overlap}")
    if h < 1 or w < 1:
        raise ValueError("image dimensions must be positive")
    stride = patch - overlap
    ys = _axis_offsets(h, patch, stride)
    xs = _axis_offsets(w, patch, stride)
    return TilePlan(h, w, patch, overlap, tuple((y, x) for y in ys for x in xs))


def _ramp(n: int, margin: int, taper_start: bool, taper_end: bool, dtype) -> torch.Tensor:
    w = torch.ones(n, dtype=dtype)
    m = min(margin, n)
    if m > 0:
        r = torch.arange(1, m + 1, dtype=dtype) / (m + 1)
        if taper_start:
            w[:m] = torch.minimum(w[:m], r)
        if taper_end:
            w[n - m :] = torch.minimum(w[n - m :], r.flip(0))
    return w


def tile_weights(plan: TilePlan, offset, dtype=torch.float64) -> torch.Tensor:
    """Separable cross-fade weight of one tile; only sides facing a neighbour are tapered."""
    y, x = offset
    th, tw = plan.tile_h, plan.tile_w
    wy = _ramp(th, plan.overlap, y > 0, y + th < plan.height, dtype)
    wx = _ramp(tw, plan.overlap, x > 0, x + tw < plan.width, dtype)
    return wy[:, None] * wx[None, :]


def weight_field(plan: TilePlan, dtype=torch.float64) -> torch.Tensor:
    """Unnormalised sum of tile weights per pixel."""
    acc = torch.zeros(plan.height, plan.width, dtype=dtype)
    for off in plan.tiles:
        y, x = off
        acc[y : y + plan.tile_h, x : x + plan.tile_w] += tile_weights(plan, off, dtype)
    return acc


def blend(tiles, plan: TilePlan) -> torch.Tensor:
    """Weighted average of ``[(offset, patch (N, C, th, tw)), ...]`` into ``(N, C, H, W)``."""
    tiles = list(tiles)
    if not tiles:
        raise RuntimeError("no tiles to blend")
    ref = tiles[0][1]
    n, c = ref.shape[:2]
    acc = torch.zeros(n, c, plan.height, plan.width, dtype=torch.float64, device=ref.device)
    wsum = torch.zeros(plan.height, plan.width, dtype=torch.float64, device=ref.device)
    for off, patch in sorted(tiles, key=lambda item: tuple(item[0])):
        y, x = off
        wt = tile_weights(plan, off).to(ref.device)
        acc[..., y : y + plan.tile_h, x : x + plan.tile_w] += patch.double() * wt
        wsum[y : y + plan.tile_h, x : x + plan.tile_w] += wt
    if (wsum <= 0).any():
        raise RuntimeError("tile plan leaves pixels uncovered")
    return (acc / wsum).to(ref.dtype)


def tiled_infer(image: torch.Tensor, plan: TilePlan, infer_fn: Callable, workers: int = 1) -> torch.Tensor:
    """Apply ``infer_fn`` per tile of ``image`` (N, C, H, W) and blend the results."""
    if tuple(image.shape[-2:]) != (plan.height, plan.width):
        raise ValueError("tile plan was built for a different image size")

    def run(off):
        y, x = off
        crop = image[..., y : y + plan.tile_h, x : x + plan.tile_w]
        try:
            return off, infer_fn(crop)
        except Exception as exc:
            raise TileError(off, exc) from exc

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(run, plan.tiles))
    else:
        results = [run(off) for off in plan.tiles]
    return blend(results, plan)
