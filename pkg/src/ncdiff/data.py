"""Image-directory manifests and deterministic crop extraction."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image as PILImage

from .imaging import load_image

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff", ".webp", ".ppm")


@dataclass(frozen=True)
class DatasetManifest:
    root: Path
    files: tuple
    crop_size: int = 64
    split: str = "train"

    def __len__(self):
        return len(self.files)


def _decodable(path: Path) -> bool:
    try:
        with PILImage.open(path) as im:
            im.load()
        return True
    except Exception:  # noqa: BLE001 - anything PIL can't read is excluded
        return False


def build_manifest(root, crop_size: int = 64, split: str = "train") -> DatasetManifest:
    """Sorted list of decodable images under ``root`` (recursive)."""
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset directory not found: {root}")
    files = []
    for p in sorted(root.rglob("*")):
        if p.suffix.lower() not in IMAGE_SUFFIXES or not p.is_file():
            continue
        if _decodable(p):
            files.append(p)
        else:
            log.warning("skipping undecodable file %s", p)
    return DatasetManifest(root, tuple(files), crop_size, split)


def random_crops(images, n: int, size: int, seed: int = 0) -> torch.Tensor:
    """``n`` crops of ``size x size`` drawn round-robin from ``(1, C, H, W)`` images."""
    images = [im for im in images if min(im.shape[-2:]) >= size]
    if not images:
        raise ValueError(f"no image is at least {size}x{size}")
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        im = images[i % len(images)]
        h, w = im.shape[-2:]
        y = int(rng.integers(0, h - size + 1))
        x = int(rng.integers(0, w - size + 1))
        out.append(im[0, :, y : y + size, x : x + size])
    return torch.stack(out)


def load_crops(manifest: DatasetManifest, n: int, seed: int = 0) -> torch.Tensor:
    if len(manifest) == 0:
        raise ValueError(f"dataset {manifest.root} contains no decodable images")
    return random_crops([load_image(p) for p in manifest.files], n, manifest.crop_size, seed)
