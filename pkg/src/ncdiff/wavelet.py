"""Orthonormal 2-D Haar transform, single and multi-level, in torch (differentiable)."""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F


@dataclass
class WaveletPyramid:
    """``levels[i] = (H, V, D)`` for level ``i + 1`` (finest first) and the coarsest ``LL``."""

    levels: list
    ll: torch.Tensor
    orig_size: tuple

    @property
    def K(self) -> int:
        return len(self.levels)

    def energy(self) -> torch.Tensor:
        e = self.ll.pow(2).sum()
        for bands in self.levels:
            for b in bands:
                e = e + b.pow(2).sum()
        return e


def dwt2(x: torch.Tensor):
    """One Haar level on ``(..., H, W)`` with even H, W. Returns ``LL, (H, V, D)``."""
    a = x[..., 0::2, 0::2]
    b = x[..., 0::2, 1::2]
    c = x[..., 1::2, 0::2]
    d = x[..., 1::2, 1::2]
    ll = (a + b + c + d) / 2
    h = (a + b - c - d) / 2
    v = (a - b + c - d) / 2
    dd = (a - b - c + d) / 2
    return ll, (h, v, dd)


def idwt2(ll: torch.Tensor, bands) -> torch.Tensor:
    h, v, d = bands
    a = (ll + h + v + d) / 2
    b = (ll + h - v - d) / 2
    c = (ll - h + v - d) / 2
    e = (ll - h - v + d) / 2
    top = torch.stack([a, b], dim=-1).flatten(-2)
    bottom = torch.stack([c, e], dim=-1).flatten(-2)
    return torch.stack([top, bottom], dim=-2).flatten(-3, -2)


def dwt_multilevel(x: torch.Tensor, K: int) -> WaveletPyramid:
    """K-level decomposition of ``(N, C, H, W)``; reflect-pads to a multiple of ``2**K``."""
    if K < 1:
        raise ValueError("K must be at least 1")
    h, w = x.shape[-2:]
    m = 2**K
    ph, pw = (-h) % m, (-w) % m
    if ph or pw:
        mode = "reflect" if min(h, w) > max(ph, pw) else "replicate"
        x = F.pad(x, (0, pw, 0, ph), mode=mode)
    levels = []
    ll = x
    for _ in range(K):
        ll, bands = dwt2(ll)
        levels.append(bands)
    return WaveletPyramid(levels, ll, (h, w))


def idwt_multilevel(pyr: WaveletPyramid) -> torch.Tensor:
    x = pyr.ll
    for bands in reversed(pyr.levels):
        x = idwt2(x, bands)
    h, w = pyr.orig_size
    return x[..., :h, :w]
