"""Small factorized-prior transform codec.

Analysis: four stride-2 5x5 convolutions with GDN between them (total stride
16).  Synthesis mirrors it with transposed convolutions and inverse GDN.  Each
latent channel has its own Laplace density used both for the training rate term
and, discretised, for the range coder tables.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass
from typing import Optional

import torch
import torch.nn.functional as F
from torch import nn

log = logging.getLogger(__name__)

QUANTIZER_MODES = ("train-uniform", "test-round")


class InvalidInputError(ValueError):
    pass


@dataclass
class CodecConfig:
    in_channels: int = 3
    hidden_channels: int = 64
    latent_channels: int = 192
    support: int = 64  # symbols live in [-support, support]
    tail_mass: float = 1e-9

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def stride(self) -> int:
        return 16


@dataclass
class Latent:
    """Bottleneck tensor ``(N, C_y, H/16, W/16)`` plus the unpadded image size."""

    data: torch.Tensor
    orig_size: tuple
    stride: int = 16

    @property
    def shape(self):
        return tuple(self.data.shape)


@dataclass
class QuantizedLatent(Latent):
    """Integer-valued latent; ``data`` has an integer dtype."""


class GDN(nn.Module):
    """Generalised divisive normalisation, ``x / sqrt(beta + gamma * x^2)``."""

    def __init__(self, ch: int, inverse: bool = False, beta_min: float = 1e-6, gamma_init: float = 0.1):
        super().__init__()
        self.inverse = inverse
        self.beta_min = beta_min
        self.beta = nn.Parameter(torch.ones(ch))
        self.gamma = nn.Parameter(gamma_init * torch.eye(ch))

    def forward(self, x):
        ch = x.shape[1]
        beta = self.beta.abs() + self.beta_min
        gamma = self.gamma.abs().reshape(ch, ch, 1, 1)
        norm = torch.sqrt(F.conv2d(x * x, gamma, beta))
        return x * norm if self.inverse else x / norm


def _round_half_away(x: torch.Tensor) -> torch.Tensor:
    # torch.round is half-to-even; ties go away from zero here
    return torch.sign(x) * torch.floor(x.abs() + 0.5)


class FactorizedCodec(nn.Module):
    def __init__(self, config: Optional[CodecConfig] = None):
        super().__init__()
        cfg = config or CodecConfig()
        self.config = cfg
        n, c = cfg.hidden_channels, cfg.latent_channels
        self.g_a = nn.Sequential(
            nn.Conv2d(cfg.in_channels, n, 5, stride=2, padding=2),
            GDN(n),
            nn.Conv2d(n, n, 5, stride=2, padding=2),
            GDN(n),
            nn.Conv2d(n, n, 5, stride=2, padding=2),
            GDN(n),
            nn.Conv2d(n, c, 5, stride=2, padding=2),
        )
        self.g_s = nn.Sequential(
            nn.ConvTranspose2d(c, n, 5, stride=2, padding=2, output_padding=1),
            GDN(n, inverse=True),
            nn.ConvTranspose2d(n, n, 5, stride=2, padding=2, output_padding=1),
            GDN(n, inverse=True),
            nn.ConvTranspose2d(n, n, 5, stride=2, padding=2, output_padding=1),
            GDN(n, inverse=True),
            nn.ConvTranspose2d(n, cfg.in_channels, 5, stride=2, padding=2, output_padding=1),
        )
        # per-channel Laplace density
        self.loc = nn.Parameter(torch.zeros(c))
        self.log_scale = nn.Parameter(torch.full((c,), math.log(2.0)))

    @property
    def stride(self) -> int:
        return self.config.stride

    # -- transforms -------------------------------------------------------

    def encode(self, image: torch.Tensor) -> Latent:
        """Analysis transform of a unit-range ``(N, C, H, W)`` batch."""
        if image.ndim != 4 or image.shape[1] != self.config.in_channels:
            raise InvalidInputError(f"expected (N, {self.config.in_channels}, H, W), got {tuple(image.shape)}")
        h, w = image.shape[-2:]
        s = self.stride
        if h < s or w < s:
            raise InvalidInputError(f"image {h}x{w} is smaller than the {s}x{s} stride")
        ph, pw = (-h) % s, (-w) % s
        x = image
        if ph or pw:
            x = F.pad(x, (0, pw, 0, ph), mode="reflect" if min(h, w) > max(ph, pw) else "replicate")
        return Latent(self.g_a(x), (h, w), s)

    def decode(self, latent: Latent, clamp: bool = True) -> torch.Tensor:
        """Synthesis transform, cropped back to the original size."""
        y = latent.data
        if y.ndim != 4 or y.shape[1] != self.config.latent_channels:
            raise InvalidInputError(
                f"latent shape {tuple(y.shape)} does not match {self.config.latent_channels} latent channels"
            )
        h, w = latent.orig_size
        if y.shape[-2] * self.stride < h or y.shape[-1] * self.stride < w:
            raise InvalidInputError("latent is too small for the recorded image size")
        x = self.g_s(y.to(self.loc.dtype))[..., :h, :w]
        return x.clamp(0.0, 1.0) if clamp else x

    # -- quantisation -----------------------------------------------------

    @staticmethod
    def quantize_train(latent: Latent, generator: Optional[torch.Generator] = None) -> Latent:
        """Additive uniform noise on [-0.5, 0.5)."""
        y = latent.data
        u = torch.rand(y.shape, generator=generator, dtype=y.dtype, device=y.device) - 0.5
        return Latent(y + u, latent.orig_size, latent.stride)

    def quantize_test(self, latent: Latent) -> QuantizedLatent:
        """Round half away from zero, clamped into the entropy-coder support."""
        q = _round_half_away(latent.data.detach())
        L = self.config.support
        if q.abs().max() > L:
            log.warning("latent values outside [-%d, %d] clamped", L, L)
            q = q.clamp(-L, L)
        return QuantizedLatent(q.to(torch.int32), latent.orig_size, latent.stride)

    def quantize(self, latent: Latent, mode: str, generator: Optional[torch.Generator] = None) -> Latent:
        if mode == "train-uniform":
            return self.quantize_train(latent, generator)
        if mode == "test-round":
            return self.quantize_test(latent)
        raise ValueError(f"unknown quantizer mode {mode!r}; choose from {QUANTIZER_MODES}")

    def reconstruct(self, image: torch.Tensor, mode: str = "test-round", generator=None) -> torch.Tensor:
        """``D{Q[E(I)]}`` clamped to [0, 1]."""
        return self.decode(self.quantize(self.encode(image), mode, generator))

    def compute_residual_noise(self, image: torch.Tensor, mode: str = "train-uniform", generator=None) -> torch.Tensor:
        """``eps_n = D{Q[E(I)]} - I`` in the image's own (unit) range."""
        with torch.no_grad():
            return self.reconstruct(image, mode, generator) - image

    # -- density ----------------------------------------------------------

    def _laplace_cdf(self, x: torch.Tensor) -> torch.Tensor:
        loc = self.loc.reshape(1, -1, 1, 1)
        scale = self.log_scale.exp().reshape(1, -1, 1, 1)
        z = (x - loc) / scale
        return 0.5 - 0.5 * torch.sign(z) * torch.expm1(-z.abs())

    def likelihood(self, y: torch.Tensor) -> torch.Tensor:
        """Probability mass of the unit bin centred at each value of ``y``."""
        loc = self.loc.reshape(1, -1, 1, 1)
        # reflect onto the lower tail so the bin difference never cancels near 1
        sign = torch.sign(y - loc).detach()
        sign = torch.where(sign == 0, torch.ones_like(sign), sign)
        upper = self._laplace_cdf(loc - sign * (y - loc) + 0.5)
        lower = self._laplace_cdf(loc - sign * (y - loc) - 0.5)
        return (upper - lower).abs().clamp_min(self.config.tail_mass)

    def rate_bits(self, y: torch.Tensor) -> torch.Tensor:
        """Differentiable estimate of the total bits for a (noisy or rounded) latent."""
        return -torch.log2(self.likelihood(y)).sum()

    def channel_pmf(self) -> torch.Tensor:
        """``(C, 2L+1)`` probabilities over the integer support, tails folded into the end bins."""
        L = self.config.support
        with torch.no_grad():
            k = torch.arange(-L, L + 1, dtype=torch.float64)
            loc = self.loc.double()[:, None]
            scale = self.log_scale.double().exp()[:, None]

            def cdf(x):
                z = (x - loc) / scale
                return 0.5 - 0.5 * torch.sign(z) * torch.expm1(-z.abs())

            upper = cdf(k[None] + 0.5)
            lower = cdf(k[None] - 0.5)
            upper[:, -1] = 1.0
            lower[:, 0] = 0.0
            return (upper - lower).clamp_min(0.0)
