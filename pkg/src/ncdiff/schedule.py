"""Noise schedules for the constrained forward process.

The forward process adds a growing fraction of the codec residual to the clean
image, ``I_t = I_0 + alpha_bar[t] * eps_n``.  ``alpha_bar`` starts at 0 and must
reach exactly 1 at ``t = T`` so that the last forward state is the decoded image.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

SCHEDULES = ("linear", "uniform")


def _compensated_cumsum(values: np.ndarray) -> np.ndarray:
    """Neumaier-compensated running sum."""
    out = np.empty(len(values), dtype=np.float64)
    total = 0.0
    comp = 0.0
    for i, v in enumerate(values):
        v = float(v)
        t = total + v
        if abs(total) >= abs(v):
            comp += (total - t) + v
        else:
            comp += (v - t) + total
        total = t
        out[i] = total + comp
    return out


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-step increments ``alpha[t-1]`` (t = 1..T) and cumulative ``alpha_bar[t]`` (t = 0..T)."""

    T: int
    alpha: np.ndarray
    alpha_bar: np.ndarray
    kind: str = "linear"

    def __post_init__(self):
        if len(self.alpha) != self.T or len(self.alpha_bar) != self.T + 1:
            raise ValueError("schedule arrays do not match T")
        if self.alpha_bar[0] != 0.0:
            raise ValueError("alpha_bar[0] must be 0")
        if np.any(self.alpha <= 0):
            raise ValueError("all increments must be positive")
        if abs(self.alpha_bar[-1] - 1.0) > 1e-12:
            raise ValueError(f"alpha_bar[T] = {self.alpha_bar[-1]!r}, expected 1")

    def step_alpha(self, t: int) -> float:
        """Increment applied when moving from ``t-1`` to ``t``."""
        if not 1 <= t <= self.T:
            raise ValueError(f"t={t} outside [1, {self.T}]")
        return float(self.alpha[t - 1])

    def cumulative(self, t: int) -> float:
        if not 0 <= t <= self.T:
            raise ValueError(f"t={t} outside [0, {self.T}]")
        return float(self.alpha_bar[t])

    def descriptor(self) -> dict:
        return {"T": self.T, "kind": self.kind}

    @classmethod
    def from_descriptor(cls, desc: dict) -> "NoiseSchedule":
        return build_schedule(desc["kind"], int(desc["T"]))


def _from_increments(alpha: np.ndarray, kind: str) -> NoiseSchedule:
    alpha_bar = np.concatenate([[0.0], _compensated_cumsum(alpha)])
    # the increments are normalised analytically; pin the endpoint so rounding never leaks into I_T
    alpha_bar[-1] = 1.0
    return NoiseSchedule(T=len(alpha), alpha=alpha, alpha_bar=alpha_bar, kind=kind)


def build_linear(T: int) -> NoiseSchedule:
    """Linearly increasing increments ``alpha_t = 2t / (T (T + 1))``."""
    if int(T) != T or T < 1:
        raise ValueError(f"T must be a positive integer, got {T!r}")
    T = int(T)
    t = np.arange(1, T + 1, dtype=np.float64)
    alpha = 2.0 * t / (T * (T + 1.0))
    return _from_increments(alpha, "linear")


def build_uniform(T: int) -> NoiseSchedule:
    """Constant increments ``alpha_t = 1 / T`` (alpha_bar linear in t)."""
    if int(T) != T or T < 1:
        raise ValueError(f"T must be a positive integer, got {T!r}")
    T = int(T)
    return _from_increments(np.full(T, 1.0 / T), "uniform")


def build_schedule(kind: str, T: int) -> NoiseSchedule:
    if kind == "linear":
        return build_linear(T)
    if kind == "uniform":
        return build_uniform(T)
    raise ValueError(f"unknown schedule {kind!r}; choose from {SCHEDULES}")


@dataclass(frozen=True)
class SamplingPlan:
    """Decreasing timestep indices starting at T; the terminal index 0 is implied."""

    indices: tuple
    alpha_bar: tuple = field(default=())

    def pairs(self):
        """Consecutive ``(t, t_prev)`` pairs, ending with ``(indices[-1], 0)``."""
        idx = list(self.indices) + [0]
        return list(zip(idx[:-1], idx[1:]))

    def __len__(self):
        return len(self.indices)


def subsample(schedule: NoiseSchedule, n_steps: int) -> SamplingPlan:
    """Uniformly spaced plan of ``n_steps`` sampler steps from T down to 0."""
    if int(n_steps) != n_steps or not 1 <= n_steps <= schedule.T:
        raise ValueError(f"n_steps must be in [1, {schedule.T}], got {n_steps!r}")
    n_steps = int(n_steps)
    T = schedule.T
    # integer arithmetic keeps the stride exact: T - floor(k*T/n)
    indices = tuple(T - (k * T) // n_steps for k in range(n_steps))
    return SamplingPlan(indices=indices, alpha_bar=tuple(float(schedule.alpha_bar[i]) for i in indices))
