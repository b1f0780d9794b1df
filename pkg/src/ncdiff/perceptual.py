"""Desk-scale perceptual distance and image embedder.

Both are built on one frozen, randomly initialised convolutional feature stack
(fixed seed, smooth activations so finite differences behave).  Pretrained
networks can be plugged in through TorchScript adapters with the same call
signatures.
"""

from __future__ import annotations

from typing import Protocol

import torch
import torch.nn.functional as F
from torch import nn

STUB_SEED = 20240613
STUB_WIDTHS = (16, 32, 64)


class PerceptualMetric(Protocol):
    descriptor: str

    def __call__(self, x: torch.Tensor, y: torch.Tensor) -> torch.Tensor: ...


class PerceptualEmbedder(Protocol):
    descriptor: str

    def __call__(self, x: torch.Tensor) -> torch.Tensor: ...


class FeatureStack(nn.Module):
    """Three conv stages (3x3, GELU, 2x average pool between stages)."""

    def __init__(self, in_channels: int = 3, widths=STUB_WIDTHS, seed: int = STUB_SEED):
        super().__init__()
        g = torch.Generator().manual_seed(seed)
        self.convs = nn.ModuleList()
        prev = in_channels
        for wdt in widths:
            conv = nn.Conv2d(prev, wdt, 3, padding=1, padding_mode="replicate")
            fan_in = prev * 9
            with torch.no_grad():
                conv.weight.copy_(torch.randn(conv.weight.shape, generator=g) * (2.0 / fan_in) ** 0.5)
                conv.bias.copy_(0.1 * torch.randn(wdt, generator=g))
            self.convs.append(conv)
            prev = wdt
        for p in self.parameters():
            p.requires_grad_(False)
        self.eval()

    def forward(self, x: torch.Tensor) -> list:
        feats = []
        h = x
        for i, conv in enumerate(self.convs):
            if i > 0 and min(h.shape[-2:]) >= 2:
                h = F.avg_pool2d(h, 2)
            h = F.gelu(conv(h))
            feats.append(h)
        return feats


def _unit_normalize(f: torch.Tensor, eps: float = 1e-4) -> torch.Tensor:
    return f / torch.sqrt(f.pow(2).sum(dim=1, keepdim=True) + eps)


class StubPerceptualDistance(nn.Module):
    """LPIPS-shaped distance: channel-normalised feature differences, averaged over layers."""

    descriptor = f"stub-features-v1-seed{STUB_SEED}"

    def __init__(self, in_channels: int = 3):
        super().__init__()
        self.features = FeatureStack(in_channels)

    def per_image(self, x: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
        fx = self.features(x.to(self.features.convs[0].weight.dtype))
        fy = self.features(y.to(self.features.convs[0].weight.dtype))
        d = 0.0
        for a, b in zip(fx, fy):
            d = d + (_unit_normalize(a) - _unit_normalize(b)).pow(2).sum(dim=1).mean(dim=(-2, -1))
        return d / len(fx)

    def forward(self, x: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
        return self.per_image(x, y).mean()


class StubEmbedder(nn.Module):
    """Image -> vector of per-channel feature means and mean squares at every stage."""

    descriptor = f"stub-embed-v1-seed{STUB_SEED}"

    def __init__(self, in_channels: int = 3):
        super().__init__()
        self.features = FeatureStack(in_channels)

    @property
    def dim(self) -> int:
        return 2 * sum(STUB_WIDTHS)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        feats = self.features(x.to(self.features.convs[0].weight.dtype))
        parts = []
        for f in feats:
            parts.append(f.mean(dim=(-2, -1)))
            parts.append(f.pow(2).mean(dim=(-2, -1)))
        return torch.cat(parts, dim=1)


class TorchScriptAdapter(nn.Module):
    """Wrap a TorchScript module file as a metric or embedder."""

    def __init__(self, path: str):
        super().__init__()
        self.module = torch.jit.load(str(path), map_location="cpu")
        self.module.eval()
        for p in self.module.parameters():
            p.requires_grad_(False)
        self.descriptor = f"external:{path}"

    def forward(self, *args):
        return self.module(*args)


def make_perceptual(spec: str = "stub", in_channels: int = 3):
    if spec == "stub":
        return StubPerceptualDistance(in_channels)
    if spec.startswith("external:"):
        return TorchScriptAdapter(spec.split(":", 1)[1])
    raise ValueError(f"unknown perceptual metric {spec!r}")


def make_embedder(spec: str = "stub", in_channels: int = 3):
    if spec == "stub":
        return StubEmbedder(in_channels)
    if spec.startswith("external:"):
        return TorchScriptAdapter(spec.split(":", 1)[1])
    raise ValueError(f"unknown embedder {spec!r}")
