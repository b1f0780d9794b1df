"""Image range conversion and lossless PNG I/O."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import torch
from PIL import Image as PILImage


def to_signed(x: torch.Tensor) -> torch.Tensor:
    """[0, 1] -> [-1, 1]."""
    return x * 2.0 - 1.0


def to_unit(x: torch.Tensor) -> torch.Tensor:
    """[-1, 1] -> [0, 1]."""
    return (x + 1.0) / 2.0


def load_image(path, channels: int = 3) -> torch.Tensor:
    """Read an image file as a ``(1, C, H, W)`` float32 tensor in [0, 1]."""
    with PILImage.open(path) as im:
        im = im.convert("RGB" if channels == 3 else "L")
        arr = np.asarray(im, dtype=np.float32) / 255.0
    if arr.ndim == 2:
        arr = arr[..., None]
    return torch.from_numpy(arr.copy()).permute(2, 0, 1)[None]


def to_uint8(x: torch.Tensor) -> np.ndarray:
    """``(1, C, H, W)`` or ``(C, H, W)`` unit-range tensor to an ``(H, W[, C])`` uint8 array."""
    if x.ndim == 4:
        if x.shape[0] != 1:
            raise ValueError("expected a single image")
        x = x[0]
    arr = (x.detach().clamp(0, 1).cpu().double().numpy() * 255.0).round().astype(np.uint8)
    arr = arr.transpose(1, 2, 0)
    return arr[..., 0] if arr.shape[-1] == 1 else arr


def save_png(x: torch.Tensor, path) -> Path:
    path = Path(path)
    PILImage.fromarray(to_uint8(x)).save(path, format="PNG")
    return path


def from_array(arr) -> torch.Tensor:
    """uint8/float ``(H, W[, C])`` array to a ``(1, 3, H, W)`` unit tensor (grey is replicated)."""
    a = np.asarray(arr)
    if a.dtype == bool:
        a = a.astype(np.float32)
    elif a.dtype == np.uint8:
        a = a.astype(np.float32) / 255.0
    else:
        a = a.astype(np.float32)
    if a.ndim == 2:
        a = np.stack([a] * 3, axis=-1)
    a = a[..., :3]
    return torch.from_numpy(np.ascontiguousarray(a)).permute(2, 0, 1)[None]
