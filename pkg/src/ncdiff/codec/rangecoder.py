"""Byte-oriented range coder with carry propagation (LZMA style).

Frequencies are integers summing to ``1 << precision``.  ``low`` is kept in 33
bits; a pending ``0xFF`` run is tracked with ``cache``/``cache_size`` so that a
late carry can ripple into bytes that were already decided.
"""

from __future__ import annotations

from bisect import bisect_right
from typing import Sequence

TOP = 1 << 24
MASK32 = 0xFFFFFFFF


class DecodeError(ValueError):
    pass


class RangeEncoder:
    def __init__(self, precision: int = 16):
        self.precision = precision
        self.low = 0
        self.range = MASK32
        self.cache = 0
        self.cache_size = 1
        self.out = bytearray()

    def _shift_low(self):
        low = self.low
        if low < 0xFF000000 or low > MASK32:
            carry = low >> 32
            temp = self.cache
            while True:
                self.out.append((temp + carry) & 0xFF)
                temp = 0xFF
                self.cache_size -= 1
                if self.cache_size == 0:
                    break
            self.cache = (low >> 24) & 0xFF
        self.cache_size += 1
        self.low = (low & 0x00FFFFFF) << 8

    def encode(self, cum_low: int, freq: int):
        if freq <= 0:
            raise ValueError("cannot encode a zero-frequency symbol")
        r = self.range >> self.precision
        self.low += r * cum_low
        self.range = r * freq
        while self.range < TOP:
            self.range <<= 8
            self._shift_low()

    def finish(self) -> bytes:
        for _ in range(5):
            self._shift_low()
        return bytes(self.out)


class RangeDecoder:
    def __init__(self, data: bytes, precision: int = 16):
        self.precision = precision
        self.data = data
        self.pos = 0
        if len(data) < 5:
            raise DecodeError("range-coded payload shorter than its 5-byte preamble")
        self.pos = 1  # leading cache byte is always 0
        self.code = 0
        for _ in range(4):
            self.code = (self.code << 8) | self._next()
        self.range = MASK32

    def _next(self) -> int:
        if self.pos >= len(self.data):
            raise DecodeError("range-coded payload is truncated")
        b = self.data[self.pos]
        self.pos += 1
        return b

    def decode(self, cdf: Sequence[int]) -> int:
        """Decode one symbol index given its cumulative table ``cdf`` (len = nsym + 1)."""
        r = self.range >> self.precision
        value = min(self.code // r, (1 << self.precision) - 1)
        s = bisect_right(cdf, value) - 1
        if s < 0 or s >= len(cdf) - 1:
            raise DecodeError("corrupt range-coded payload")
        lo, hi = cdf[s], cdf[s + 1]
        if hi == lo:
            raise DecodeError("corrupt range-coded payload (zero-frequency symbol)")
        self.code -= r * lo
        self.range = r * (hi - lo)
        while self.range < TOP:
            self.code = ((self.code << 8) | self._next()) & MASK32
            self.range <<= 8
        return s
