"""Zero-shot sample guidance.

At each sampler step the clean estimate ``I_0^theta`` is pulled towards the
decoded image in embedding space: the gradient of
``mean ||embed(I_0^theta) - embed(I_T)||^2`` with respect to ``I_0^theta`` is
scaled by ``lam`` and subtracted from the ordinary step.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import torch

log = logging.getLogger(__name__)


@dataclass
class GuidanceConfig:
    lam: float = 1e-2
    enabled: bool = True

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("guidance lambda must be non-negative")


def clip_loss(I_0_theta: torch.Tensor, I_T: torch.Tensor, embedder) -> torch.Tensor:
    """Mean squared distance between the embeddings of two images."""
    return torch.mean((embedder(I_0_theta) - embedder(I_T)) ** 2)


def guidance_gradient(I_0_theta: torch.Tensor, I_T: torch.Tensor, embedder) -> torch.Tensor:
    """``d clip_loss / d I_0_theta``; nothing else receives gradient."""
    with torch.enable_grad():
        x = I_0_theta.detach().requires_grad_(True)
        with torch.no_grad():
            target = embedder(I_T.detach())
        loss = torch.mean((embedder(x) - target) ** 2)
        (grad,) = torch.autograd.grad(loss, x)
    return grad


def guided_sampler_step(I_t, t, t_prev, eps_hat, schedule, config: GuidanceConfig, embedder, I_T):
    """Ordinary step minus ``lam * grad``; falls back to the ordinary step if the embedder fails."""
    from .diffusion import predict_x0, sampler_step

    step = sampler_step(I_t, t, t_prev, eps_hat, schedule)
    if not config.enabled or config.lam == 0:
        return step
    x0 = predict_x0(I_t, t, eps_hat, schedule)
    try:
        grad = guidance_gradient(x0, I_T, embedder)
    except Exception as exc:  # noqa: BLE001 - any embedder failure degrades to unguided sampling
        log.warning("embedder failed at t=%d (%s); taking an unguided step", t, exc)
        return step
    if not torch.isfinite(grad).all():
        log.warning("non-finite guidance gradient at t=%d; taking an unguided step", t)
        return step
    return step - config.lam * grad.to(step.dtype)
