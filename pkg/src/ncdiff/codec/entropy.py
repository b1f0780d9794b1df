"""Integer CDF tables over a bounded symbol support and the coding loop that uses them."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .rangecoder import RangeDecoder, RangeEncoder

PRECISION = 16


def quantize_pmf(pmf: np.ndarray, precision: int = PRECISION) -> np.ndarray:
    """Integer frequencies summing to ``2**precision`` with every symbol >= 1.

    Largest-remainder rounding, so probabilities that are exact multiples of
    ``2**-precision`` are reproduced exactly.
    """
    pmf = np.asarray(pmf, dtype=np.float64)
    pmf = pmf / pmf.sum()
    total = 1 << precision
    if len(pmf) > total:
        raise ValueError("support larger than the coder precision")
    scaled = pmf * total
    freq = np.maximum(np.floor(scaled).astype(np.int64), 1)
    diff = total - int(freq.sum())
    if diff > 0:
        order = np.argsort(-(scaled - np.floor(scaled)), kind="stable")
        freq[order[:diff]] += 1
    while diff < 0:
        # take back from the most probable symbols, never below 1
        order = np.argsort(-freq, kind="stable")
        for i in order:
            if diff == 0:
                break
            if freq[i] > 1:
                freq[i] -= 1
                diff += 1
    return freq


@dataclass
class EntropyModel:
    """Per-channel frequency tables over symbols ``-support .. support``."""

    freqs: np.ndarray  # (C, 2L+1) int64, each row sums to 2**precision
    support: int
    precision: int = PRECISION

    def __post_init__(self):
        self.freqs = np.asarray(self.freqs, dtype=np.int64)
        if self.freqs.ndim != 2 or self.freqs.shape[1] != 2 * self.support + 1:
            raise ValueError("frequency table shape does not match the support")
        if np.any(self.freqs < 1):
            raise ValueError("every symbol needs a non-zero frequency")
        if np.any(self.freqs.sum(axis=1) != 1 << self.precision):
            raise ValueError("frequency rows must sum to 2**precision")
        self._cdf_lists = [[0] + np.cumsum(row).tolist() for row in self.freqs]

    @classmethod
    def from_pmf(cls, pmf, support: int, precision: int = PRECISION) -> "EntropyModel":
        pmf = np.atleast_2d(np.asarray(pmf, dtype=np.float64))
        return cls(np.stack([quantize_pmf(p, precision) for p in pmf]), support, precision)

    @classmethod
    def uniform(cls, channels: int, support: int, precision: int = PRECISION) -> "EntropyModel":
        return cls.from_pmf(np.ones((channels, 2 * support + 1)), support, precision)

    @property
    def channels(self) -> int:
        return self.freqs.shape[0]

    def cdf(self) -> np.ndarray:
        """Normalised cumulative tables, shape ``(C, 2L+2)``, from 0 to 1."""
        c = np.concatenate([np.zeros((self.channels, 1), dtype=np.int64), np.cumsum(self.freqs, axis=1)], axis=1)
        return c / float(1 << self.precision)

    def probabilities(self) -> np.ndarray:
        return self.freqs / float(1 << self.precision)

    def _symbols(self, q) -> tuple:
        q = np.asarray(q)
        if q.ndim != 4 or q.shape[1] != self.channels:
            raise ValueError(f"expected (N, {self.channels}, H, W) symbols, got {q.shape}")
        if np.abs(q).max(initial=0) > self.support:
            raise ValueError("symbol outside the coder support; clamp before coding")
        chan = np.broadcast_to(np.arange(self.channels)[None, :, None, None], q.shape)
        return (q.astype(np.int64) + self.support).ravel(), chan.ravel()

    def estimate_bits(self, q) -> float:
        """Ideal code length ``-sum log2 p(symbol)`` under the integer tables."""
        idx, chan = self._symbols(q)
        p = self.freqs[chan, idx] / float(1 << self.precision)
        return float(-np.log2(p).sum())

    def encode(self, q) -> bytes:
        idx, chan = self._symbols(q)
        enc = RangeEncoder(self.precision)
        cdfs = self._cdf_lists
        for s, c in zip(idx.tolist(), chan.tolist()):
            table = cdfs[c]
            lo = table[s]
            enc.encode(lo, table[s + 1] - lo)
        return enc.finish()

    def decode(self, payload: bytes, shape: tuple) -> np.ndarray:
        n, c, h, w = shape
        if c != self.channels:
            raise ValueError("channel count does not match the entropy model")
        dec = RangeDecoder(payload, self.precision)
        out = np.empty(n * c * h * w, dtype=np.int64)
        cdfs = self._cdf_lists
        plane = h * w
        i = 0
        for _ in range(n):
            for ch in range(c):
                table = cdfs[ch]
                for _ in range(plane):
                    out[i] = dec.decode(table)
                    i += 1
        return (out - self.support).reshape(shape)
