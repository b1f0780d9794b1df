"""Run configuration: one flat namespace of dotted keys with typed defaults.

File format, one setting per line::

    # comment
    diffusion.T = 1000
    aff.r_th = [0.5, 0.4, 0.3, 0.25]
    loss.perceptual = stub

Values are Python literals; anything that does not parse as one is kept as a
bare string.  Unknown keys are rejected.
"""

from __future__ import annotations

import ast
from pathlib import Path

DEFAULTS = {
    "seed": 0,
    "data.crop_size": 64,
    "data.num_crops": 100,
    "codec.lambda_rd": 0.004,
    "codec.steps": 3000,
    "codec.lr": 1e-3,
    "codec.lr_decay_at": 0.8,  # fraction of codec.steps after which lr is divided by 10
    "codec.batch_size": 8,
    "codec.hidden_channels": 64,
    "codec.latent_channels": 192,
    "diffusion.T": 1000,
    "diffusion.schedule": "linear",
    "diffusion.steps": 5000,
    "diffusion.quantizer": "train-uniform",
    "diffusion.cache_residuals": False,
    "sampler.steps": 1,
    "loss.omega": 0.5,
    "loss.beta": 0.3,
    "loss.wavelet_levels": 4,
    "loss.perceptual": "stub",
    "optim.lr": 8e-5,
    "optim.batch_size": 1,
    "optim.lr_decay_at": 1.0,  # 1.0 keeps the learning rate constant
    "unet.base_channels": 32,
    "unet.attention_stage": 2,
    "aff.enabled": True,
    "aff.gamma_init": 0.0,
    "aff.r_th": [0.5, 0.4, 0.3, 0.25],
    "tile.enabled": True,
    "tile.size": 256,
    "tile.overlap": 64,
    "guidance.lambda": 0.01,
    "guidance.embedder": "stub",
    "train.log_every": 50,
    "train.checkpoint_every": 1000,
}

CHOICES = {
    "diffusion.schedule": ("linear", "uniform"),
    "diffusion.quantizer": ("train-uniform", "test-round"),
}


class ConfigError(ValueError):
    pass


def _parse_value(raw: str):
    raw = raw.strip()
    try:
        return ast.literal_eval(raw)
    except (ValueError, SyntaxError):
        low = raw.lower()
        if low in ("true", "false"):
            return low == "true"
        if low in ("none", "null"):
            return None
        return raw


def _coerce(key: str, value):
    default = DEFAULTS[key]
    if value is None:
        if key == "unet.attention_stage":
            return None
        raise ConfigError(f"{key} cannot be empty")
    try:
        if isinstance(default, bool):
            if not isinstance(value, bool):
                raise TypeError
            out = value
        elif isinstance(default, int):
            if isinstance(value, bool) or float(value) != int(value):
                raise TypeError
            out = int(value)
        elif isinstance(default, float):
            if isinstance(value, bool):
                raise TypeError
            out = float(value)
        elif isinstance(default, list):
            out = [float(v) for v in value]
        else:
            out = str(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: cannot use {value!r} (expected {type(default).__name__})") from None
    if key in CHOICES and out not in CHOICES[key]:
        raise ConfigError(f"{key} must be one of {CHOICES[key]}, got {out!r}")
    return out


class RunConfig(dict):
    """Dict of every known key; construct with overrides, never with unknown keys."""

    def __init__(self, overrides=None, **kw):
        super().__init__(DEFAULTS)
        self.update_checked(dict(overrides or {}, **kw))

    def update_checked(self, values: dict):
        for key, value in values.items():
            if key not in DEFAULTS:
                raise ConfigError(f"unknown config key {key!r}")
            self[key] = _coerce(key, value)
        return self

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        return cls(parse_text(Path(path).read_text()))

    def dumps(self) -> str:
        return "".join(f"{k} = {self[k]!r}\n" for k in sorted(self))

    def write(self, path):
        Path(path).write_text(self.dumps())


def parse_text(text: str) -> dict:
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, raw = line.split("=", 1)
        key = key.strip()
        if key in values:
            raise ConfigError(f"line {lineno}: {key} set twice")
        values[key] = _parse_value(raw)
    return values


def parse_overrides(items) -> dict:
    """``["key=value", ...]`` from the command line."""
    out = {}
    for item in items or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        k, v = item.split("=", 1)
        out[k.strip()] = _parse_value(v)
    return out
