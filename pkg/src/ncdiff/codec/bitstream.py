"""On-disk container: a fixed big-endian header followed by the range-coded payload.

Layout::

    magic        4s   b"NCDF"
    version      u8
    orig_h       u32
    orig_w       u32
    latent_c     u16
    latent_h     u16
    latent_w     u16
    payload_len  u32
    payload      payload_len bytes
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

from .rangecoder import DecodeError

MAGIC = b"NCDF"
VERSION = 1
HEADER = struct.Struct(">4sBIIHHHI")


class FormatError(ValueError):
    pass


@dataclass(frozen=True)
class Bitstream:
    orig_h: int
    orig_w: int
    latent_c: int
    latent_h: int
    latent_w: int
    payload: bytes
    version: int = VERSION

    @property
    def payload_len(self) -> int:
        return len(self.payload)

    @property
    def latent_shape(self) -> tuple:
        return (1, self.latent_c, self.latent_h, self.latent_w)

    def to_bytes(self) -> bytes:
        head = HEADER.pack(
            MAGIC, self.version, self.orig_h, self.orig_w, self.latent_c, self.latent_h, self.latent_w, len(self.payload)
        )
        return head + self.payload

    @classmethod
    def from_bytes(cls, data: bytes) -> "Bitstream":
        if len(data) < HEADER.size:
            raise FormatError(f"file has {len(data)} bytes, shorter than the {HEADER.size}-byte header")
        magic, version, oh, ow, lc, lh, lw, plen = HEADER.unpack_from(data)
        if magic != MAGIC:
            raise FormatError(f"bad magic {magic!r}")
        if version != VERSION:
            raise FormatError(f"unsupported bitstream version {version}")
        payload = data[HEADER.size :]
        if len(payload) < plen:
            raise DecodeError(f"payload truncated: header declares {plen} bytes, found {len(payload)}")
        if len(payload) > plen:
            raise FormatError(f"{len(payload) - plen} trailing bytes after payload")
        return cls(oh, ow, lc, lh, lw, bytes(payload), version)

    def __len__(self) -> int:
        return HEADER.size + len(self.payload)

    def bpp(self) -> float:
        """Bits per pixel of the whole file."""
        return bpp_from_bytes(len(self), self.orig_h, self.orig_w)


def bpp_from_bytes(n_bytes: int, height: int, width: int) -> float:
    return 8.0 * n_bytes / (height * width)


def write_bitstream(path, bs: Bitstream):
    with open(path, "wb") as f:
        f.write(bs.to_bytes())


def read_bitstream(path) -> Bitstream:
    with open(path, "rb") as f:
        return Bitstream.from_bytes(f.read())
