"""Quality metrics and Bjontegaard rate differences."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import torch
import torch.nn.functional as F
from scipy.interpolate import PchipInterpolator

log = logging.getLogger(__name__)

PSNR_CAP = 100.0
MS_SSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)


def _check_pair(a: torch.Tensor, b: torch.Tensor):
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")


def psnr(a: torch.Tensor, b: torch.Tensor, peak: float = 1.0) -> float:
    """PSNR in dB over the whole tensor, capped at 100 dB."""
    _check_pair(a, b)
    mse = torch.mean((a.double() - b.double()) ** 2).item()
    if mse == 0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(peak**2 / mse))


def _gaussian_window(size: int, sigma: float, dtype) -> torch.Tensor:
    x = torch.arange(size, dtype=dtype) - (size - 1) / 2
    g = torch.exp(-(x**2) / (2 * sigma**2))
    return g / g.sum()


def _filter(x: torch.Tensor, win: torch.Tensor) -> torch.Tensor:
    c = x.shape[1]
    k = win.numel()
    x = F.conv2d(x, win.reshape(1, 1, 1, k).expand(c, 1, 1, k), groups=c)
    return F.conv2d(x, win.reshape(1, 1, k, 1).expand(c, 1, k, 1), groups=c)


def _ssim_cs(a, b, win, data_range):
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    mu_a, mu_b = _filter(a, win), _filter(b, win)
    saa = _filter(a * a, win) - mu_a**2
    sbb = _filter(b * b, win) - mu_b**2
    sab = _filter(a * b, win) - mu_a * mu_b
    cs = (2 * sab + c2) / (saa + sbb + c2)
    lum = (2 * mu_a * mu_b + c1) / (mu_a**2 + mu_b**2 + c1)
    return (lum * cs).mean(dim=(-2, -1)), cs.mean(dim=(-2, -1))


def ms_ssim(a: torch.Tensor, b: torch.Tensor, data_range: float = 1.0, win_size: int = 11, sigma: float = 1.5) -> float:
    """Five-scale MS-SSIM of ``(N, C, H, W)`` inputs, averaged over images and channels.

    Inputs whose short side is below 160 use fewer scales with the weights
    renormalised; the Gaussian window shrinks if a scale is narrower than it.
    """
    _check_pair(a, b)
    a = a.double()
    b = b.double()
    min_side = min(a.shape[-2:])
    scales = 5
    while scales > 1 and min_side / 2 ** (scales - 1) < 10:
        scales -= 1
    if scales < 5:
        log.info("ms_ssim: %d px side supports %d scales", min_side, scales)
    weights = torch.tensor(MS_SSIM_WEIGHTS[:scales], dtype=torch.float64)
    weights = weights / weights.sum()
    values = []
    for s in range(scales):
        side = min(a.shape[-2:])
        k = min(win_size, side if side % 2 else side - 1)
        k = max(k, 1)
        win = _gaussian_window(k, sigma, torch.float64)
        ssim_val, cs = _ssim_cs(a, b, win, data_range)
        values.append(ssim_val if s == scales - 1 else cs)
        if s < scales - 1:
            pad = (0, a.shape[-1] % 2, 0, a.shape[-2] % 2)
            a = F.avg_pool2d(F.pad(a, pad, mode="replicate"), 2)
            b = F.avg_pool2d(F.pad(b, pad, mode="replicate"), 2)
    stack = torch.relu(torch.stack(values, dim=0))  # (scales, N, C)
    out = torch.prod(stack ** weights[:, None, None], dim=0)
    return float(out.mean())


@dataclass
class RDPoint:
    bpp: float
    psnr_db: float
    ms_ssim: float = float("nan")
    perceptual: Optional[float] = None
    label: str = ""

    def __post_init__(self):
        if not self.bpp > 0:
            raise ValueError("bpp must be positive")


@dataclass
class RDCurve:
    points: list = field(default_factory=list)
    codec_id: str = ""

    def __post_init__(self):
        self.points = sorted(self.points, key=lambda p: p.bpp)
        bpps = [p.bpp for p in self.points]
        if len(bpps) < 2:
            raise ValueError("an RD curve needs at least two points")
        if any(x >= y for x, y in zip(bpps, bpps[1:])):
            raise ValueError("RD curve bitrates must be strictly increasing")

    def rates(self) -> np.ndarray:
        return np.array([p.bpp for p in self.points], dtype=np.float64)

    def qualities(self, metric: str = "psnr") -> np.ndarray:
        attr = {"psnr": "psnr_db", "ms_ssim": "ms_ssim", "perceptual": "perceptual"}[metric]
        return np.array([getattr(p, attr) for p in self.points], dtype=np.float64)


LOWER_IS_BETTER = ("perceptual",)


def bd_rate(anchor: RDCurve, test: RDCurve, metric: str = "psnr") -> float:
    """Average rate difference of ``test`` vs ``anchor`` at equal quality, in percent.

    Log-rate is interpolated as a piecewise cubic (PCHIP) function of quality
    and integrated over the overlapping quality interval.
    """
    if len(anchor.points) < 4 or len(test.points) < 4:
        raise ValueError("BD-rate needs at least four points per curve")
    sign = -1.0 if metric in LOWER_IS_BETTER else 1.0

    def interp(curve):
        q = sign * curve.qualities(metric)
        r = np.log(curve.rates())
        order = np.argsort(q)
        q, r = q[order], r[order]
        if np.any(np.diff(q) <= 0):
            raise ValueError("quality must be strictly monotone along an RD curve")
        return q, PchipInterpolator(q, r)

    qa, fa = interp(anchor)
    qt, ft = interp(test)
    lo, hi = max(qa[0], qt[0]), min(qa[-1], qt[-1])
    if not hi > lo:
        raise ValueError("RD curves have no overlapping quality range")
    ia = fa.integrate(lo, hi)
    it = ft.integrate(lo, hi)
    avg = (it - ia) / (hi - lo)
    return float((math.exp(avg) - 1.0) * 100.0)
