"""Conditional U-Net noise predictor ``eps_theta(I_t, t, I_T)``.

Four resolution stages on the way down (two residual blocks each, a stride-2
conv between stages), a two-block middle, and four stages on the way up with
three residual blocks each.  The condition ``I_T`` is concatenated to ``I_t``
at the input; the timestep enters every residual block through a scale-shift.
Skip features pass through an :class:`~ncdiff.aff.AFF` filter before they are
concatenated on the way up.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import torch
import torch.nn.functional as F
from torch import nn

from .aff import AFF, AFFConfig


@dataclass
class PredictorConfig:
    in_channels: int = 3
    base_channels: int = 32
    stage_multipliers: tuple = (1, 2, 2, 4)
    attention_stage: Optional[int] = 2  # 0-based; None disables attention
    time_embed_dim: int = 128
    down_blocks: int = 2
    up_blocks: int = 3
    aff: AFFConfig = field(default_factory=AFFConfig)

    def __post_init__(self):
        if isinstance(self.aff, dict):
            self.aff = AFFConfig(**self.aff)
        self.stage_multipliers = tuple(int(m) for m in self.stage_multipliers)
        if len(self.stage_multipliers) != 4:
            raise ValueError("the predictor has exactly four stages")
        if len(self.aff.r_th) != len(self.stage_multipliers):
            raise ValueError("need one r_th per skip level")
        if self.attention_stage is not None and not 0 <= self.attention_stage < 4:
            raise ValueError(f"attention_stage out of range: {self.attention_stage}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["stage_multipliers"] = list(self.stage_multipliers)
        d["aff"]["r_th"] = list(self.aff.r_th)
        return d

    @property
    def size_multiple(self) -> int:
        return 2 ** (len(self.stage_multipliers) - 1)


def timestep_embedding(t: torch.Tensor, dim: int, max_period: float = 10000.0) -> torch.Tensor:
    half = dim // 2
    freqs = torch.exp(-math.log(max_period) * torch.arange(half, dtype=torch.float32, device=t.device) / half)
    args = t.float()[:, None] * freqs[None]
    emb = torch.cat([torch.cos(args), torch.sin(args)], dim=-1)
    if dim % 2:
        emb = F.pad(emb, (0, 1))
    return emb


def _groups(ch: int) -> int:
    for g in (8, 4, 2, 1):
        if ch % g == 0:
            return g
    return 1


class ResBlock(nn.Module):
    def __init__(self, in_ch: int, out_ch: int, temb_dim: int):
        super().__init__()
        self.norm1 = nn.GroupNorm(_groups(in_ch), in_ch)
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, padding=1)
        self.temb = nn.Linear(temb_dim, 2 * out_ch)
        self.norm2 = nn.GroupNorm(_groups(out_ch), out_ch)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1)
        self.skip = nn.Conv2d(in_ch, out_ch, 1) if in_ch != out_ch else nn.Identity()

    def forward(self, x, temb):
        h = self.conv1(F.silu(self.norm1(x)))
        scale, shift = self.temb(F.silu(temb))[:, :, None, None].chunk(2, dim=1)
        h = self.norm2(h) * (1 + scale) + shift
        h = self.conv2(F.silu(h))
        return self.skip(x) + h


class SelfAttention(nn.Module):
    def __init__(self, ch: int, head_dim: int = 32):
        super().__init__()
        self.heads = max(1, ch // head_dim)
        self.norm = nn.GroupNorm(_groups(ch), ch)
        self.qkv = nn.Conv2d(ch, 3 * ch, 1)
        self.proj = nn.Conv2d(ch, ch, 1)

    def forward(self, x):
        n, c, h, w = x.shape
        q, k, v = self.qkv(self.norm(x)).reshape(n, 3, self.heads, c // self.heads, h * w).unbind(1)
        # (n, heads, tokens, dim)
        q, k, v = (z.transpose(-1, -2) for z in (q, k, v))
        out = F.scaled_dot_product_attention(q, k, v)
        out = out.transpose(-1, -2).reshape(n, c, h, w)
        return x + self.proj(out)


class NoisePredictor(nn.Module):
    def __init__(self, config: Optional[PredictorConfig] = None):
        super().__init__()
        cfg = config or PredictorConfig()
        self.config = cfg
        chs = [cfg.base_channels * m for m in cfg.stage_multipliers]
        tdim = cfg.time_embed_dim
        self.time_mlp = nn.Sequential(nn.Linear(tdim, tdim), nn.SiLU(), nn.Linear(tdim, tdim))
        self.conv_in = nn.Conv2d(2 * cfg.in_channels, chs[0], 3, padding=1)

        self.down = nn.ModuleList()
        self.down_attn = nn.ModuleList()
        self.downsample = nn.ModuleList()
        prev = chs[0]
        for i, ch in enumerate(chs):
            blocks = nn.ModuleList()
            for _ in range(cfg.down_blocks):
                blocks.append(ResBlock(prev, ch, tdim))
                prev = ch
            self.down.append(blocks)
            self.down_attn.append(self._attn_list(i, ch, cfg.down_blocks))
            self.downsample.append(nn.Conv2d(ch, ch, 3, stride=2, padding=1) if i < len(chs) - 1 else nn.Identity())

        self.mid1 = ResBlock(prev, prev, tdim)
        self.mid2 = ResBlock(prev, prev, tdim)

        self.aff = nn.ModuleList(AFF(r, cfg.aff.gamma_init) for r in cfg.aff.r_th) if cfg.aff.enabled else None
        self.up = nn.ModuleList()
        self.up_attn = nn.ModuleList()
        self.upsample = nn.ModuleList()
        for i in reversed(range(len(chs))):
            ch = chs[i]
            blocks = nn.ModuleList()
            for j in range(cfg.up_blocks):
                blocks.append(ResBlock(prev + ch if j == 0 else ch, ch, tdim))
                prev = ch
            self.up.append(blocks)
            self.up_attn.append(self._attn_list(i, ch, cfg.up_blocks))
            self.upsample.append(
                nn.Sequential(nn.Upsample(scale_factor=2, mode="nearest"), nn.Conv2d(ch, chs[i - 1], 3, padding=1))
                if i > 0
                else nn.Identity()
            )
            if i > 0:
                prev = chs[i - 1]

        self.norm_out = nn.GroupNorm(_groups(prev), prev)
        self.conv_out = nn.Conv2d(prev, cfg.in_channels, 3, padding=1)

    def _attn_list(self, stage, ch, n):
        if self.config.attention_stage == stage:
            return nn.ModuleList(SelfAttention(ch) for _ in range(n))
        return nn.ModuleList(nn.Identity() for _ in range(n))

    def forward(self, x_t: torch.Tensor, t, cond: torch.Tensor) -> torch.Tensor:
        if x_t.shape != cond.shape:
            raise ValueError(f"I_t {tuple(x_t.shape)} and I_T {tuple(cond.shape)} differ in shape")
        n, _, h, w = x_t.shape
        m = self.config.size_multiple
        ph, pw = (-h) % m, (-w) % m
        x = torch.cat([x_t, cond], dim=1)
        if ph or pw:
            x = F.pad(x, (0, pw, 0, ph), mode="reflect" if min(h, w) > max(ph, pw) else "replicate")

        t = torch.as_tensor(t, device=x.device)
        if t.ndim == 0:
            t = t.expand(n)
        temb = self.time_mlp(timestep_embedding(t, self.config.time_embed_dim).to(x.dtype))

        h_ = self.conv_in(x)
        skips = []
        for blocks, attns, down in zip(self.down, self.down_attn, self.downsample):
            for block, attn in zip(blocks, attns):
                h_ = attn(block(h_, temb))
            skips.append(h_)
            h_ = down(h_)

        h_ = self.mid2(self.mid1(h_, temb), temb)

        for k, (blocks, attns, up) in enumerate(zip(self.up, self.up_attn, self.upsample)):
            level = len(skips) - 1 - k
            s = skips[level]
            if self.aff is not None:
                s = self.aff[level](s)
            h_ = torch.cat([h_, s], dim=1)
            for block, attn in zip(blocks, attns):
                h_ = attn(block(h_, temb))
            h_ = up(h_)

        out = self.conv_out(F.silu(self.norm_out(h_)))
        return out[..., :h, :w]

    def predict(self, x_t, t, cond):
        return self(x_t, t, cond)

    def aff_gammas(self) -> list:
        return [] if self.aff is None else [float(a.gamma.detach()) for a in self.aff]


def count_parameters(config: Optional[PredictorConfig] = None, seed: int = 0) -> int:
    """Number of trainable scalars in a predictor built from ``config``."""
    with torch.random.fork_rng():
        torch.manual_seed(seed)
        model = NoisePredictor(config)
    return sum(p.numel() for p in model.parameters() if p.requires_grad)
