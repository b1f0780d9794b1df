"""Checkpoint files for the codec and the diffusion model.

A checkpoint is a ``torch.save`` dict holding a ``kind`` tag, the model
config, weights, and (for diffusion) the schedule descriptor, so inference
always rebuilds the schedule the predictor was trained with.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import torch

from .aff import AFFConfig
from .codec import CodecConfig, FactorizedCodec
from .schedule import NoiseSchedule
from .unet import NoisePredictor, PredictorConfig

FORMAT = 1
CODEC_KIND = "ncd-codec"
DIFFUSION_KIND = "ncd-diffusion"


class CheckpointError(RuntimeError):
    pass


def resolve(path) -> Path:
    """Return ``path`` if it exists, else look it up under ``$NCD_CACHE_DIR``."""
    p = Path(path)
    if p.exists():
        return p
    cache = os.environ.get("NCD_CACHE_DIR")
    if cache and (Path(cache) / p.name).exists():
        return Path(cache) / p.name
    raise FileNotFoundError(f"checkpoint not found: {path}")


def _load(path, kind: str) -> dict:
    data = torch.load(resolve(path), map_location="cpu", weights_only=True)
    if not isinstance(data, dict) or data.get("kind") != kind:
        raise CheckpointError(f"{path} is not a {kind} checkpoint")
    if data.get("format") != FORMAT:
        raise CheckpointError(f"{path}: unsupported checkpoint format {data.get('format')}")
    return data


def save_codec(path, codec: FactorizedCodec, train_state: Optional[dict] = None, run_config: Optional[dict] = None):
    torch.save(
        {
            "kind": CODEC_KIND,
            "format": FORMAT,
            "config": codec.config.to_dict(),
            "state_dict": codec.state_dict(),
            "train_state": train_state or {},
            "run_config": run_config or {},
        },
        path,
    )


def load_codec_full(path):
    data = _load(path, CODEC_KIND)
    codec = FactorizedCodec(CodecConfig(**data["config"]))
    codec.load_state_dict(data["state_dict"])
    codec.eval()
    for p in codec.parameters():
        p.requires_grad_(False)
    return codec, data


def load_codec(path) -> FactorizedCodec:
    return load_codec_full(path)[0]


@dataclass
class DiffusionBundle:
    """Predictor + schedule + the settings it was trained under."""

    predictor: NoisePredictor
    schedule: NoiseSchedule
    meta: dict = field(default_factory=dict)

    def __call__(self, x_t, t, cond):
        return self.predictor(x_t, t, cond)


def save_diffusion(
    path,
    predictor: NoisePredictor,
    schedule: NoiseSchedule,
    train_state: Optional[dict] = None,
    run_config: Optional[dict] = None,
    codec_id: str = "",
):
    torch.save(
        {
            "kind": DIFFUSION_KIND,
            "format": FORMAT,
            "config": predictor.config.to_dict(),
            "schedule": schedule.descriptor(),
            "state_dict": predictor.state_dict(),
            "train_state": train_state or {},
            "run_config": run_config or {},
            "codec_id": codec_id,
        },
        path,
    )


def _predictor_config(d: dict) -> PredictorConfig:
    d = dict(d)
    d["aff"] = AFFConfig(**d["aff"])
    return PredictorConfig(**d)


def load_diffusion_full(path):
    data = _load(path, DIFFUSION_KIND)
    predictor = NoisePredictor(_predictor_config(data["config"]))
    predictor.load_state_dict(data["state_dict"])
    predictor.eval()
    for p in predictor.parameters():
        p.requires_grad_(False)
    schedule = NoiseSchedule.from_descriptor(data["schedule"])
    bundle = DiffusionBundle(predictor, schedule, {"run_config": data["run_config"], "codec_id": data["codec_id"]})
    return bundle, data


def load_diffusion(path) -> DiffusionBundle:
    return load_diffusion_full(path)[0]
