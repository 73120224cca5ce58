"""Diffusion noise schedule and the single-step denoising identity."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch


class ScheduleError(ValueError):
    pass


def make_alpha_bar(n_steps: int, beta_start: float, beta_end: float) -> np.ndarray:
    """Cumulative products alpha_bar[t] = prod_{s<=t} (1 - beta_s), beta linear.

    Returns a float64 array of length n_steps, strictly decreasing, in (0, 1).
    """
    if n_steps < 1:
        raise ScheduleError(f"n_steps must be >= 1, got {n_steps}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ScheduleError(f"invalid beta bounds ({beta_start}, {beta_end})")
    betas = np.linspace(beta_start, beta_end, n_steps, dtype=np.float64)
    alpha_bar = np.cumprod(1.0 - betas)
    if not (alpha_bar > 0.0).all():
        raise ScheduleError("alpha_bar underflowed to zero")
    return alpha_bar


@dataclass(frozen=True)
class NoiseSchedule:
    alpha_bar: np.ndarray
    t_index: int

    def __post_init__(self):
        if not (0 <= self.t_index < len(self.alpha_bar)):
            raise ScheduleError(
                f"t_index {self.t_index} outside schedule of length {len(self.alpha_bar)}")

    @property
    def alpha_bar_t(self) -> float:
        return float(self.alpha_bar[self.t_index])


def one_step_denoise(z, eps, alpha_bar_t: float):
    """Recover the clean latent from (noisy latent, predicted noise) in one step.

    z0 = (z - sqrt(1 - alpha_bar_t) * eps) / sqrt(alpha_bar_t)

    Works on torch tensors and numpy arrays alike; z and eps must share shape.
    """
    if not (0.0 < alpha_bar_t <= 1.0):
        raise ScheduleError(f"alpha_bar_t must be in (0, 1], got {alpha_bar_t}")
    if tuple(z.shape) != tuple(eps.shape):
        raise ScheduleError(f"shape mismatch: z {tuple(z.shape)} vs eps {tuple(eps.shape)}")
    sq = math.sqrt(alpha_bar_t)
    sq1m = math.sqrt(1.0 - alpha_bar_t)
    return (z - sq1m * eps) / sq


def add_noise(z0, eps, alpha_bar_t: float):
    """Forward diffusion to timestep t: z = sqrt(ab)*z0 + sqrt(1-ab)*eps."""
    if not (0.0 < alpha_bar_t <= 1.0):
        raise ScheduleError(f"alpha_bar_t must be in (0, 1], got {alpha_bar_t}")
    return math.sqrt(alpha_bar_t) * z0 + math.sqrt(1.0 - alpha_bar_t) * eps


def timestep_tensor(batch: int, t_index: int, device=None) -> torch.Tensor:
    return torch.full((batch,), t_index, dtype=torch.long, device=device)
