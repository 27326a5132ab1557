"""Training schedules: credibility decay, cross-supervision ramp, learning rate.

The credibility decay rate starts at ``alpha0`` and follows a half-cosine
rampdown over fixed-size iteration blocks, hitting exactly zero in the last
block, so supervision transitions from dense pseudo labels to the sparse
annotated slices alone. The cross-supervision weight ramps up to
``lambda_oc`` with the Gaussian ramp conventional in consistency-based
semi-supervised training; the learning rate follows a polynomial decay
between its exact endpoints.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

__all__ = ["ScheduleConfig", "gauss_rampup", "alpha_at", "lambda_at", "lr_at"]


@dataclass(frozen=True)
class ScheduleConfig:
    total_iters: int = 6000
    alpha0: float = 0.95
    alpha_update_every: int = 1000
    lambda_oc: float = 0.8
    lr0: float = 0.01
    lr_min: float = 0.0001

    def __post_init__(self):
        if not 0 <= self.alpha0 < 1:
            raise ValueError(f"alpha0 must be in [0, 1), got {self.alpha0}")
        if not 0 <= self.lambda_oc <= 1:
            raise ValueError(f"lambda_oc must be in [0, 1], got {self.lambda_oc}")
        if not self.lr0 >= self.lr_min > 0:
            raise ValueError(f"need lr0 >= lr_min > 0, got {self.lr0}, {self.lr_min}")
        if self.total_iters < 1 or self.alpha_update_every < 1:
            raise ValueError("total_iters and alpha_update_every must be >= 1")
        if self.total_iters % self.alpha_update_every != 0:
            raise ValueError(
                f"total_iters ({self.total_iters}) must be divisible by "
                f"alpha_update_every ({self.alpha_update_every})"
            )
        if self.total_iters // self.alpha_update_every < 2:
            raise ValueError("need at least two decay blocks for the rampdown to reach zero")

    @property
    def n_blocks(self) -> int:
        return self.total_iters // self.alpha_update_every


def _progress(iteration: int, cfg: ScheduleConfig) -> float:
    return min(max(iteration / cfg.total_iters, 0.0), 1.0)


def gauss_rampup(t: float) -> float:
    """exp(-5 (1-t)^2) clamped to t in [0, 1]; rises from e^-5 to exactly 1."""
    t = min(max(t, 0.0), 1.0)
    return math.exp(-5.0 * (1.0 - t) ** 2)


def alpha_at(iteration: int, cfg: ScheduleConfig) -> float:
    """Piecewise-constant half-cosine rampdown: block k of K gets
    alpha0 * (1 + cos(pi k/(K-1))) / 2, so block 0 is alpha0 and the last
    block is exactly 0."""
    k = min(iteration // cfg.alpha_update_every, cfg.n_blocks - 1)
    frac = k / (cfg.n_blocks - 1)
    if frac >= 1.0:
        return 0.0
    return cfg.alpha0 * 0.5 * (1.0 + math.cos(math.pi * frac))


def lambda_at(iteration: int, cfg: ScheduleConfig) -> float:
    """Cross-supervision weight: lambda_oc * gauss_rampup(t)."""
    return cfg.lambda_oc * gauss_rampup(_progress(iteration, cfg))


def lr_at(iteration: int, cfg: ScheduleConfig) -> float:
    """Polynomial decay with exponent 0.9; lr(0)=lr0 and lr(total)=lr_min."""
    t = _progress(iteration, cfg)
    return cfg.lr_min + (cfg.lr0 - cfg.lr_min) * (1.0 - t) ** 0.9
