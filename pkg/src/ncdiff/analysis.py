"""Codec-noise statistics and rate-distortion sweeps."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch
from scipy import ndimage

from .imaging import to_signed

log = logging.getLogger(__name__)

CSV_FIELDS = ("codec_id", "variant", "dataset", "bpp", "psnr", "ms_ssim", "perceptual")


@dataclass
class NoiseReport:
    hist_counts: np.ndarray  # probability mass per bin, sums to 1
    hist_edges: np.ndarray
    magnitude_map: np.ndarray  # (H, W) mean |eps| over channels
    band_energy: np.ndarray  # fraction of spectral energy per radial band (low -> high)
    mean: float
    variance: float
    edge_correlation: float

    def to_dict(self) -> dict:
        return {
            "mean": self.mean,
            "variance": self.variance,
            "edge_correlation": self.edge_correlation,
            "band_energy": self.band_energy.tolist(),
            "hist_counts": self.hist_counts.tolist(),
            "hist_edges": self.hist_edges.tolist(),
        }


def gradient_magnitude(image: np.ndarray) -> np.ndarray:
    """Sobel magnitude of the channel mean of a ``(C, H, W)`` array."""
    grey = image.mean(axis=0)
    gy = ndimage.sobel(grey, axis=0, mode="reflect")
    gx = ndimage.sobel(grey, axis=1, mode="reflect")
    return np.hypot(gx, gy)


def radial_band_energy(noise: np.ndarray, bands: int = 8) -> np.ndarray:
    spec = np.abs(np.fft.fftshift(np.fft.fft2(noise), axes=(-2, -1))) ** 2
    spec = spec.sum(axis=0)
    h, w = spec.shape
    u = (np.arange(h) - h // 2) * 2.0 / h
    v = (np.arange(w) - w // 2) * 2.0 / w
    r = np.sqrt(u[:, None] ** 2 + v[None, :] ** 2) / np.sqrt(2.0)
    idx = np.minimum((r * bands).astype(int), bands - 1)
    energy = np.bincount(idx.ravel(), weights=spec.ravel(), minlength=bands)
    return energy / max(energy.sum(), 1e-300)


def report_from_residual(image: torch.Tensor, eps: torch.Tensor, bins: int = 101) -> NoiseReport:
    """Statistics of a residual ``eps`` (signed units) against its source image ``(1, C, H, W)``."""
    img = image[0].detach().double().cpu().numpy()
    e = eps[0].detach().double().cpu().numpy()
    mag = np.abs(e).mean(axis=0)
    grad = gradient_magnitude(img)
    if mag.std() == 0 or grad.std() == 0:
        corr = 0.0
    else:
        corr = float(np.corrcoef(mag.ravel(), grad.ravel())[0, 1])
    lim = max(float(np.abs(e).max()), 1e-12)
    counts, edges = np.histogram(e.ravel(), bins=bins, range=(-lim, lim))
    return NoiseReport(
        hist_counts=counts / counts.sum(),
        hist_edges=edges,
        magnitude_map=mag,
        band_energy=radial_band_energy(e),
        mean=float(e.mean()),
        variance=float(e.var()),
        edge_correlation=corr,
    )


def noise_statistics(image: torch.Tensor, codec, quantizer_mode: str = "test-round", generator=None) -> NoiseReport:
    """Report on the codec residual of a unit-range image, in signed ([-1, 1]) units."""
    with torch.no_grad():
        eps = codec.compute_residual_noise(image, quantizer_mode, generator) * 2.0
    return report_from_residual(image, eps)


def gaussian_control(image: torch.Tensor, std: float, seed: int = 0) -> NoiseReport:
    """Same pipeline fed i.i.d. Gaussian noise of matching spread."""
    g = torch.Generator().manual_seed(seed)
    eps = torch.randn(image.shape, generator=g, dtype=torch.float64) * std
    return report_from_residual(image, eps)


def rd_sweep(
    images: Sequence,
    codec_paths: Sequence,
    diffusion_paths,
    steps: int,
    out_dir,
    dataset: str = "dataset",
    guidance_lambda: float = 0.0,
    tile: Optional[tuple] = (256, 64),
    plot: bool = True,
) -> tuple:
    """One RD point per (codec, variant) with bpp taken from the written bitstream files.

    ``images`` is a list of ``(name, (1, C, H, W) unit tensor)``.  ``diffusion_paths``
    is one checkpoint for every codec or a list aligned with ``codec_paths``.
    Returns ``(curves, rows)``: the RD curves (``initial`` and ``nc-diffusion``)
    and the CSV rows.  Writes
    ``rd.csv`` (+ ``rd_psnr.png`` when ``plot``) into ``out_dir``.
    """
    from . import checkpoint
    from .codec import compress, decompress, entropy_model, write_bitstream
    from .metrics import RDCurve, RDPoint, ms_ssim, psnr
    from .perceptual import StubPerceptualDistance
    from .pipeline import enhance

    out_dir = Path(out_dir)
    (out_dir / "bitstreams").mkdir(parents=True, exist_ok=True)
    if isinstance(diffusion_paths, (str, Path)):
        diffusion_paths = [diffusion_paths] * len(codec_paths)
    perceptual = StubPerceptualDistance()
    rows = []
    points = {"initial": [], "nc-diffusion": []}
    for cpath, dpath in zip(codec_paths, diffusion_paths):
        cpath = Path(cpath)
        if not cpath.exists():
            log.warning("codec checkpoint %s missing; skipped", cpath)
            continue
        codec = checkpoint.load_codec(cpath)
        diff = checkpoint.load_diffusion(dpath) if dpath is not None and Path(dpath).exists() else None
        if diff is None:
            log.warning("diffusion checkpoint %s missing; only the initial variant is reported", dpath)
        model = entropy_model(codec)
        agg = {v: {"bits": 0.0, "pixels": 0, "psnr": [], "ms_ssim": [], "perceptual": []} for v in points}
        for name, img in images:
            bs = compress(codec, img, model)
            bpath = out_dir / "bitstreams" / f"{cpath.stem}__{name}.ncdf"
            write_bitstream(bpath, bs)
            nbits = 8 * bpath.stat().st_size
            I_T = decompress(codec, bs, model)
            outputs = {"initial": I_T}
            if diff is not None:
                outputs["nc-diffusion"] = enhance(
                    I_T, diff, steps=steps, guidance_lambda=guidance_lambda, tile=tile
                )
            for variant, rec in outputs.items():
                a = agg[variant]
                a["bits"] += nbits
                a["pixels"] += img.shape[-2] * img.shape[-1]
                a["psnr"].append(psnr(rec, img))
                a["ms_ssim"].append(ms_ssim(rec, img))
                with torch.no_grad():
                    a["perceptual"].append(float(perceptual(to_signed(rec), to_signed(img))))
        for variant, a in agg.items():
            if not a["pixels"]:
                continue
            row = {
                "codec_id": cpath.stem,
                "variant": variant,
                "dataset": dataset,
                "bpp": a["bits"] / a["pixels"],
                "psnr": float(np.mean(a["psnr"])),
                "ms_ssim": float(np.mean(a["ms_ssim"])),
                "perceptual": float(np.mean(a["perceptual"])),
            }
            rows.append(row)
            points[variant].append(
                RDPoint(row["bpp"], row["psnr"], row["ms_ssim"], row["perceptual"], f"{cpath.stem}/{variant}")
            )

    with open(out_dir / "rd.csv", "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=CSV_FIELDS)
        writer.writeheader()
        writer.writerows(rows)

    curves = [RDCurve(pts, variant) for variant, pts in points.items() if len(pts) >= 2]
    if plot and curves:
        _plot_curves(curves, out_dir / "rd_psnr.png")
    return curves, rows


def _plot_curves(curves, path):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 4))
    for c in curves:
        ax.plot(c.rates(), c.qualities("psnr"), marker="o", label=c.codec_id)
    ax.set_xlabel("bpp")
    ax.set_ylabel("PSNR (dB)")
    ax.grid(alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
