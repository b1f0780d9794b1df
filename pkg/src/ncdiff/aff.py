"""Adaptive frequency-domain filtering of U-Net skip features.

A skip feature is moved to the 2-D Fourier domain, every coefficient whose
normalised radius is at or beyond ``r_th`` is scaled by ``1 + gamma`` and the
result is transformed back.  ``gamma`` is learned, one scalar per skip level.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.fft as fft
from torch import nn

DEFAULT_R_TH = (0.5, 0.4, 0.3, 0.25)


@dataclass
class AFFConfig:
    r_th: tuple = DEFAULT_R_TH
    gamma_init: float = 0.0
    enabled: bool = True

    def __post_init__(self):
        self.r_th = tuple(float(r) for r in self.r_th)
        if any(not 0.0 < r <= 1.0 for r in self.r_th):
            raise ValueError(f"r_th values must lie in (0, 1], got {self.r_th}")
        if any(a < b for a, b in zip(self.r_th, self.r_th[1:])):
            raise ValueError(f"r_th must be non-increasing with depth, got {self.r_th}")


def radial_frequency(h: int, w: int, device=None, dtype=torch.float64) -> torch.Tensor:
    """Normalised distance of each centred frequency bin from DC.

    Offsets are measured from the centre bin ``(h // 2, w // 2)`` of the
    fftshift layout, so the corners sit at ``r ~ sqrt(2)``.
    """
    u = torch.arange(h, device=device, dtype=dtype) - h // 2
    v = torch.arange(w, device=device, dtype=dtype) - w // 2
    ru = (2.0 * u / h)[:, None]
    rv = (2.0 * v / w)[None, :]
    return torch.sqrt(ru**2 + rv**2)


def build_radial_mask(h: int, w: int, r_th: float, gamma) -> torch.Tensor:
    """Centred (fftshift layout) mask: 1 where ``r < r_th``, ``1 + gamma`` elsewhere.

    ``gamma`` may be a float or a 0-d tensor; gradients flow through it.
    """
    if h < 1 or w < 1:
        raise ValueError("mask dimensions must be positive")
    if not torch.is_tensor(gamma):
        gamma = torch.tensor(float(gamma), dtype=torch.float64)
    r = radial_frequency(h, w, device=gamma.device)
    high = (r >= r_th).to(gamma.dtype if gamma.is_floating_point() else torch.float32)
    return 1.0 + gamma * high


def aff_filter(skip: torch.Tensor, r_th: float, gamma) -> torch.Tensor:
    """Scale Fourier coefficients of ``skip`` (..., H, W) beyond ``r_th`` by ``1 + gamma``."""
    h, w = skip.shape[-2:]
    spec = fft.fftshift(fft.fft2(skip, dim=(-2, -1)), dim=(-2, -1))
    mask = build_radial_mask(h, w, r_th, gamma).to(device=skip.device, dtype=skip.dtype)
    spec = spec * mask
    out = fft.ifft2(fft.ifftshift(spec, dim=(-2, -1)), dim=(-2, -1))
    return out.real


class AFF(nn.Module):
    """Skip-connection filter for one U-Net level."""

    def __init__(self, r_th: float, gamma_init: float = 0.0):
        super().__init__()
        self.r_th = float(r_th)
        self.gamma = nn.Parameter(torch.tensor(float(gamma_init)))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        # r_th beyond the corner radius means nothing is ever amplified
        if self.r_th > math.sqrt(2.0):
            return x
        return aff_filter(x, self.r_th, self.gamma)

    def extra_repr(self):
        return f"r_th={self.r_th}"
