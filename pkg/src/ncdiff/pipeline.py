"""Decoder-side enhancement: decoded image in, NC-Diffusion output out."""

from __future__ import annotations

from typing import Optional

import torch

from .diffusion import infer
from .guidance import GuidanceConfig
from .imaging import to_signed, to_unit
from .perceptual import make_embedder
from .schedule import subsample
from .tiling import plan_tiles, tiled_infer


@torch.no_grad()
def enhance(
    I_T: torch.Tensor,
    bundle,
    steps: int = 1,
    guidance_lambda: float = 0.0,
    embedder=None,
    tile: Optional[tuple] = (256, 64),
    workers: int = 1,
) -> torch.Tensor:
    """Run the reverse process on a unit-range decoded image ``(1, C, H, W)``.

    ``tile=(patch, overlap)`` enables overlapping-patch inference once the
    image exceeds one patch on either axis; ``tile=None`` disables it.
    Returns a unit-range image.
    """
    plan = subsample(bundle.schedule, steps)
    guidance = GuidanceConfig(lam=guidance_lambda) if guidance_lambda else None
    if guidance is not None and embedder is None:
        embedder = make_embedder("stub", I_T.shape[1])

    def run(x_unit):
        return to_unit(infer(to_signed(x_unit), plan, bundle, bundle.schedule, guidance, embedder))

    h, w = I_T.shape[-2:]
    if tile is None or (h <= tile[0] and w <= tile[0]):
        return run(I_T)
    tp = plan_tiles(h, w, tile[0], tile[1])
    return tiled_infer(I_T, tp, run, workers=workers)
