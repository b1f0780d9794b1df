"""Noise-constrained diffusion: forward process, training step and deterministic sampler.

The noise source is the codec's own reconstruction error ``eps_n = I_T - I_0``
(signed image range).  Forward: ``I_t = I_0 + alpha_bar[t] * eps_n``.  Reverse:
``I_{t'} = I_t - (alpha_bar[t] - alpha_bar[t']) * eps_theta(I_t, t, I_T)``,
starting from the decoded image ``I_T`` itself.  No fresh noise is ever drawn
at inference time.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import torch

from .codec import FactorizedCodec
from .guidance import GuidanceConfig, guided_sampler_step
from .imaging import to_signed
from .losses import LossWeights, NonFiniteLossError, diffusion_loss, high_freq_loss, total_loss
from .schedule import NoiseSchedule, SamplingPlan

log = logging.getLogger(__name__)

Predictor = Callable[[torch.Tensor, int, torch.Tensor], torch.Tensor]


def forward_sample(I_0: torch.Tensor, eps_n: torch.Tensor, t: int, schedule: NoiseSchedule) -> torch.Tensor:
    if I_0.shape != eps_n.shape:
        raise ValueError("I_0 and eps_n differ in shape")
    return I_0 + schedule.cumulative(t) * eps_n


def predict_x0(I_t: torch.Tensor, t: int, eps_hat: torch.Tensor, schedule: NoiseSchedule) -> torch.Tensor:
    if t < 1:
        raise ValueError("predict_x0 needs t >= 1")
    return I_t - schedule.cumulative(t) * eps_hat


def sampler_step(I_t, t: int, t_prev: int, eps_hat, schedule: NoiseSchedule) -> torch.Tensor:
    if not 0 <= t_prev < t:
        raise ValueError(f"sampler step needs t > t_prev >= 0, got t={t}, t_prev={t_prev}")
    return I_t - (schedule.cumulative(t) - schedule.cumulative(t_prev)) * eps_hat


def sample_timestep(T: int, n: int = 1, generator: Optional[torch.Generator] = None) -> torch.Tensor:
    """``t ~ Uniform{1..T}``."""
    return torch.randint(1, T + 1, (n,), generator=generator)


@torch.no_grad()
def residual_pair(codec: FactorizedCodec, I_0: torch.Tensor, mode: str = "train-uniform", generator=None):
    """Signed-range ``(I_T, eps_n)`` for a signed-range batch; ``eps_n = I_T - I_0`` exactly."""
    I_T = to_signed(codec.reconstruct((I_0 + 1.0) / 2.0, mode, generator)).to(I_0.dtype)
    return I_T, I_T - I_0


@dataclass
class TrainBatchRecord:
    I_0: torch.Tensor
    eps_n: torch.Tensor
    t: int
    losses: dict = field(default_factory=dict)  # l_eps, l_lpips, l_high, l_total


def training_step(
    I_0: torch.Tensor,
    codec: Optional[FactorizedCodec],
    predictor: torch.nn.Module,
    schedule: NoiseSchedule,
    optimizer: Optional[torch.optim.Optimizer],
    weights: LossWeights = LossWeights(),
    perceptual=None,
    quantizer_mode: str = "train-uniform",
    generator: Optional[torch.Generator] = None,
    eps_n: Optional[torch.Tensor] = None,
    t: Optional[int] = None,
) -> TrainBatchRecord:
    """One gradient step on a signed-range batch.

    ``eps_n`` may be supplied (cached residuals); otherwise it is drawn fresh from
    the frozen codec.  ``optimizer=None`` evaluates the losses without updating.
    """
    if t is None:
        t = int(sample_timestep(schedule.T, 1, generator))
    if eps_n is None:
        if codec is None:
            raise ValueError("need a codec or precomputed eps_n")
        _, eps_n = residual_pair(codec, I_0, quantizer_mode, generator)
    I_T = I_0 + eps_n
    I_t = forward_sample(I_0, eps_n, t, schedule)

    eps_hat = predictor(I_t, t, I_T)
    I_0_theta = predict_x0(I_t, t, eps_hat, schedule)
    l_diff, l_eps, l_lpips = diffusion_loss(eps_hat, eps_n, I_0, I_0_theta, weights.omega, perceptual, parts=True)
    l_high = high_freq_loss(I_0, I_0_theta, weights.K) if weights.beta > 0 else torch.zeros_like(l_diff)
    for name, v in (("l_eps", l_eps), ("l_lpips", l_lpips)):
        if not torch.isfinite(v):
            raise NonFiniteLossError(name, v.item())
    l_total = total_loss(l_diff, l_high, weights.beta)

    if optimizer is not None:
        optimizer.zero_grad()
        l_total.backward()
        optimizer.step()
    losses = {
        "l_eps": l_eps.item(),
        "l_lpips": l_lpips.item(),
        "l_high": l_high.item(),
        "l_total": l_total.item(),
    }
    return TrainBatchRecord(I_0=I_0.detach(), eps_n=eps_n.detach(), t=t, losses=losses)


def infer(
    I_T: torch.Tensor,
    plan: SamplingPlan,
    predictor: Predictor,
    schedule: NoiseSchedule,
    guidance: Optional[GuidanceConfig] = None,
    embedder=None,
    clamp: bool = True,
) -> torch.Tensor:
    """Deterministic reverse process from ``I_T`` (signed range) down to ``t = 0``."""
    if plan.indices[0] != schedule.T:
        raise ValueError("a sampling plan must start at T")
    use_guidance = guidance is not None and guidance.enabled and guidance.lam != 0
    if use_guidance and embedder is None:
        raise ValueError("guidance needs an embedder")
    cond = I_T.detach()
    # the running state is kept in float64 so long plans do not accumulate rounding error
    x = cond.to(torch.float64)
    for t, t_prev in plan.pairs():
        with torch.no_grad():
            eps_hat = predictor(x.to(cond.dtype), t, cond).to(torch.float64)
        if use_guidance:
            x = guided_sampler_step(x, t, t_prev, eps_hat, schedule, guidance, embedder, cond)
        else:
            x = sampler_step(x, t, t_prev, eps_hat, schedule)
    x = x.to(cond.dtype)
    return x.clamp(-1.0, 1.0) if clamp else x
