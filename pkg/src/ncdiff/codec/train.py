"""Rate-distortion training of the backbone codec."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import torch

from .model import CodecConfig, FactorizedCodec

log = logging.getLogger(__name__)


@dataclass
class CodecTrainResult:
    codec: FactorizedCodec
    history: list = field(default_factory=list)  # (step, loss, mse, bpp)
    optimizer_state: Optional[dict] = None
    step: int = 0


def rd_loss(codec: FactorizedCodec, batch: torch.Tensor, lambda_rd: float, generator=None):
    """``lambda_rd * 255^2 * MSE + bpp`` with the additive-noise quantiser."""
    latent = codec.encode(batch)
    noisy = codec.quantize_train(latent, generator)
    x_hat = codec.decode(noisy, clamp=False)
    mse = torch.mean((x_hat - batch) ** 2)
    n, _, h, w = batch.shape
    bpp = codec.rate_bits(noisy.data) / (n * h * w)
    return lambda_rd * 255.0**2 * mse + bpp, mse, bpp


def step_generator(seed: int, step: int) -> torch.Generator:
    """Independent generator per (seed, step) so a resumed run replays the same draws."""
    return torch.Generator().manual_seed(int(seed) * 1_000_003 + int(step))


def train_codec(
    crops: torch.Tensor,
    lambda_rd: float,
    steps: int,
    config: Optional[CodecConfig] = None,
    batch_size: int = 8,
    lr: float = 1e-3,
    seed: int = 0,
    codec: Optional[FactorizedCodec] = None,
    optimizer_state: Optional[dict] = None,
    start_step: int = 0,
    log_every: int = 50,
    on_log: Optional[Callable] = None,
    total_steps: Optional[int] = None,
    lr_decay_at: float = 0.8,
) -> CodecTrainResult:
    """Train (or resume training) a codec on unit-range crops ``(N, C, h, w)``.

    The learning rate drops by 10x once the global step reaches
    ``lr_decay_at * total_steps`` (``total_steps`` defaults to the end of this
    call; pass the full run length when training in chunks).
    """
    if crops.ndim != 4 or len(crops) == 0:
        raise ValueError("need a non-empty (N, C, h, w) crop tensor")
    if codec is None:
        torch.manual_seed(seed)
        codec = FactorizedCodec(config)
    codec.train()
    opt = torch.optim.Adam(codec.parameters(), lr=lr)
    if optimizer_state is not None:
        opt.load_state_dict(optimizer_state)
    history = []
    decay_step = int(lr_decay_at * (start_step + steps if total_steps is None else total_steps))
    for step in range(start_step, start_step + steps):
        for group in opt.param_groups:
            group["lr"] = lr if step < decay_step else 0.1 * lr
        g = step_generator(seed, step)
        idx = torch.randint(len(crops), (min(batch_size, len(crops)),), generator=g)
        batch = crops[idx]
        flip = torch.rand(len(idx), generator=g) < 0.5
        batch = torch.where(flip[:, None, None, None], batch.flip(-1), batch)
        loss, mse, bpp = rd_loss(codec, batch, lambda_rd, g)
        if not torch.isfinite(loss):
            raise FloatingPointError(
                f"codec training diverged at step {step}: loss={loss.item()} mse={mse.item()} bpp={bpp.item()}"
            )
        opt.zero_grad()
        loss.backward()
        torch.nn.utils.clip_grad_norm_(codec.parameters(), 5.0)
        opt.step()
        if (step + 1) % log_every == 0:
            row = (step + 1, loss.item(), mse.item(), bpp.item())
            history.append(row)
            log.info("codec step %d loss %.4f mse %.5f bpp %.4f", *row)
            if on_log is not None:
                on_log(row)
    codec.eval()
    return CodecTrainResult(codec, history, opt.state_dict(), start_step + steps)


@torch.no_grad()
def evaluate_codec(codec: FactorizedCodec, images: torch.Tensor, lambda_rd: float = 0.0) -> dict:
    """Held-out MSE and estimated bpp with rounding."""
    codec.eval()
    latent = codec.encode(images)
    q = codec.quantize_test(latent)
    x_hat = codec.decode(q)
    mse = torch.mean((x_hat - images) ** 2).item()
    n, _, h, w = images.shape
    bpp = codec.rate_bits(q.data.float()).item() / (n * h * w)
    return {"mse": mse, "bpp": bpp, "loss": lambda_rd * 255.0**2 * mse + bpp}


def freeze(module: torch.nn.Module) -> torch.nn.Module:
    for p in module.parameters():
        p.requires_grad_(False)
    module.eval()
    return module
