"""Transform codec backbone: analysis/synthesis, quantisation, entropy coding, bitstream."""

from __future__ import annotations

import numpy as np
import torch

from .bitstream import Bitstream, FormatError, bpp_from_bytes, read_bitstream, write_bitstream
from .entropy import EntropyModel
from .model import (
    QUANTIZER_MODES,
    CodecConfig,
    FactorizedCodec,
    InvalidInputError,
    Latent,
    QuantizedLatent,
)
from .rangecoder import DecodeError

__all__ = [
    "Bitstream",
    "CodecConfig",
    "DecodeError",
    "EntropyModel",
    "FactorizedCodec",
    "FormatError",
    "InvalidInputError",
    "Latent",
    "QUANTIZER_MODES",
    "QuantizedLatent",
    "bpp_from_bytes",
    "compress",
    "decompress",
    "entropy_decode",
    "entropy_encode",
    "entropy_model",
    "estimate_bits",
    "read_bitstream",
    "write_bitstream",
]


def entropy_model(codec: FactorizedCodec) -> EntropyModel:
    """Discretise the codec's per-channel densities into coder tables."""
    return EntropyModel.from_pmf(codec.channel_pmf().numpy(), codec.config.support)


def estimate_bits(q: QuantizedLatent, model: EntropyModel) -> float:
    return model.estimate_bits(q.data.cpu().numpy())


def entropy_encode(q: QuantizedLatent, model: EntropyModel) -> Bitstream:
    if q.data.shape[0] != 1:
        raise InvalidInputError("a bitstream holds exactly one image")
    _, c, h, w = q.data.shape
    payload = model.encode(q.data.cpu().numpy())
    return Bitstream(q.orig_size[0], q.orig_size[1], c, h, w, payload)


def entropy_decode(bs: Bitstream, model: EntropyModel) -> QuantizedLatent:
    symbols = model.decode(bs.payload, bs.latent_shape)
    return QuantizedLatent(torch.from_numpy(symbols.astype(np.int32)), (bs.orig_h, bs.orig_w))


@torch.no_grad()
def compress(codec: FactorizedCodec, image: torch.Tensor, model: EntropyModel = None) -> Bitstream:
    """Unit-range ``(1, C, H, W)`` image to bitstream."""
    model = model or entropy_model(codec)
    return entropy_encode(codec.quantize_test(codec.encode(image)), model)


@torch.no_grad()
def decompress(codec: FactorizedCodec, bs: Bitstream, model: EntropyModel = None) -> torch.Tensor:
    """Bitstream to the initial reconstruction ``I_T`` in [0, 1]."""
    if bs.latent_c != codec.config.latent_channels:
        raise InvalidInputError(
            f"bitstream has {bs.latent_c} latent channels, codec expects {codec.config.latent_channels}"
        )
    model = model or entropy_model(codec)
    return codec.decode(entropy_decode(bs, model))
