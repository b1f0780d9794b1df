"""Training objective: noise MSE + perceptual term + wavelet high-frequency term."""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch

from .wavelet import dwt_multilevel


@dataclass
class LossWeights:
    omega: float = 0.5  # perceptual weight
    beta: float = 0.3  # high-frequency weight
    K: int = 4  # wavelet levels

    def __post_init__(self):
        if self.omega < 0 or self.beta < 0:
            raise ValueError("loss weights must be non-negative")
        if self.K < 1:
            raise ValueError("need at least one wavelet level")


class NonFiniteLossError(FloatingPointError):
    def __init__(self, component: str, value):
        super().__init__(f"loss component {component!r} is not finite ({value})")
        self.component = component


def noise_mse(eps_hat: torch.Tensor, eps_n: torch.Tensor) -> torch.Tensor:
    return torch.mean((eps_hat - eps_n) ** 2)


def diffusion_loss(eps_hat, eps_n, I_0, I_0_theta, omega: float, perceptual=None, parts: bool = False):
    """``mean ||eps_hat - eps_n||^2 + omega * d(I_0, I_0_theta)``.

    With ``parts=True`` returns ``(total, mse, perceptual_distance)``.
    """
    if eps_hat.shape != eps_n.shape or I_0.shape != I_0_theta.shape:
        raise ValueError("shape mismatch in diffusion loss inputs")
    mse = noise_mse(eps_hat, eps_n)
    if omega == 0 or perceptual is None:
        d = torch.zeros((), dtype=mse.dtype, device=mse.device)
    else:
        d = perceptual(I_0, I_0_theta)
    total = mse + omega * d
    return (total, mse, d) if parts else total


def high_freq_loss(I_0: torch.Tensor, I_0_theta: torch.Tensor, K: int = 4) -> torch.Tensor:
    """Sum over levels of the per-subband mean squared error of the H, V, D bands."""
    if I_0.shape != I_0_theta.shape:
        raise ValueError("shape mismatch in high-frequency loss")
    pa = dwt_multilevel(I_0, K)
    pb = dwt_multilevel(I_0_theta, K)
    loss = torch.zeros((), dtype=I_0.dtype, device=I_0.device)
    for ba, bb in zip(pa.levels, pb.levels):
        for x, y in zip(ba, bb):
            loss = loss + torch.mean((x - y) ** 2)
    return loss


def total_loss(l_diff, l_high, beta: float):
    """``L_diff + beta * L_high``; raises naming the first non-finite component."""
    for name, v in (("l_diff", l_diff), ("l_high", l_high)):
        val = float(v.detach()) if torch.is_tensor(v) else float(v)
        if not math.isfinite(val):
            raise NonFiniteLossError(name, val)
    return l_diff + beta * l_high
