"""Training loop for the noise predictor over a fixed, frozen codec."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import torch

from .codec import FactorizedCodec
from .codec.train import freeze, step_generator
from .diffusion import residual_pair, training_step
from .imaging import to_signed
from .losses import LossWeights
from .schedule import NoiseSchedule
from .unet import NoisePredictor, PredictorConfig

log = logging.getLogger(__name__)


@dataclass
class DiffusionTrainResult:
    predictor: NoisePredictor
    history: list = field(default_factory=list)  # (step, l_eps, l_lpips, l_high, l_total)
    optimizer_state: Optional[dict] = None
    step: int = 0


def train_diffusion(
    crops: torch.Tensor,
    codec: FactorizedCodec,
    schedule: NoiseSchedule,
    steps: int,
    predictor: Optional[NoisePredictor] = None,
    predictor_config: Optional[PredictorConfig] = None,
    weights: LossWeights = LossWeights(),
    perceptual=None,
    lr: float = 8e-5,
    batch_size: int = 1,
    seed: int = 0,
    quantizer_mode: str = "train-uniform",
    cache_residuals: bool = False,
    optimizer_state: Optional[dict] = None,
    start_step: int = 0,
    log_every: int = 50,
    on_log: Optional[Callable] = None,
    total_steps: Optional[int] = None,
    lr_decay_at: float = 1.0,
) -> DiffusionTrainResult:
    """Run ``steps`` optimiser steps on unit-range crops ``(N, C, h, w)``.

    The codec is frozen on entry and never updated.  Every draw (crop index,
    flip, timestep, quantiser noise) comes from a generator keyed on
    ``(seed, step)``, so resuming from ``start_step`` replays the same run.
    With ``lr_decay_at < 1`` the learning rate drops by 10x from global step
    ``lr_decay_at * total_steps`` on.
    """
    if crops.ndim != 4 or len(crops) == 0:
        raise ValueError("need a non-empty (N, C, h, w) crop tensor")
    freeze(codec)
    if predictor is None:
        with torch.random.fork_rng():
            torch.manual_seed(seed)
            predictor = NoisePredictor(predictor_config)
    predictor.train()
    opt = torch.optim.Adam(predictor.parameters(), lr=lr)
    if optimizer_state is not None:
        opt.load_state_dict(optimizer_state)

    signed = to_signed(crops)
    cached = None
    if cache_residuals:
        # the codec is not flip-equivariant, so both orientations get their own residual
        g = step_generator(seed, -1)
        cached = [
            torch.cat([residual_pair(codec, src[i : i + 16], quantizer_mode, g)[1] for i in range(0, len(src), 16)])
            for src in (signed, signed.flip(-1))
        ]

    history = []
    acc = torch.zeros(4)
    decay_step = int(lr_decay_at * (start_step + steps if total_steps is None else total_steps))
    for step in range(start_step, start_step + steps):
        for group in opt.param_groups:
            group["lr"] = lr if step < decay_step else 0.1 * lr
        g = step_generator(seed, step)
        idx = torch.randint(len(signed), (min(batch_size, len(signed)),), generator=g)
        flip = bool(torch.rand((), generator=g) < 0.5)
        I_0 = signed[idx].flip(-1) if flip else signed[idx]
        eps_n = None if cached is None else cached[int(flip)][idx]
        try:
            rec = training_step(
                I_0, codec, predictor, schedule, opt, weights, perceptual, quantizer_mode, generator=g, eps_n=eps_n
            )
        except FloatingPointError as exc:
            raise FloatingPointError(f"diffusion training aborted at step {step}: {exc}") from exc
        acc += torch.tensor([rec.losses[k] for k in ("l_eps", "l_lpips", "l_high", "l_total")])
        if (step + 1) % log_every == 0:
            mean = (acc / log_every).tolist()
            row = (step + 1, *mean)
            history.append(row)
            acc.zero_()
            log.info("diffusion step %d l_eps %.5f l_lpips %.5f l_high %.5f l_total %.5f", *row)
            if on_log is not None:
                on_log(row)
    predictor.eval()
    return DiffusionTrainResult(predictor, history, opt.state_dict(), start_step + steps)
