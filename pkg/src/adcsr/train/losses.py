"""Training losses for both stages.

All reductions use the mean-over-elements convention so loss weights stay
independent of feature-map and batch sizes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F


class TrainError(RuntimeError):
    """Setup violation or non-finite loss during training."""


def distill_loss(f_s: torch.Tensor, f_t: torch.Tensor) -> torch.Tensor:
    """Mean absolute difference between student and teacher feature maps."""
    if f_s.shape != f_t.shape:
        raise TrainError(f"feature shapes differ: {tuple(f_s.shape)} vs {tuple(f_t.shape)}")
    return (f_s - f_t).abs().mean()


def adv_gen_loss(d_out: torch.Tensor) -> torch.Tensor:
    """Non-saturating generator loss: mean softplus(-logit)."""
    return F.softplus(-d_out).mean()


def adv_disc_loss(d_real: torch.Tensor, d_fake: torch.Tensor) -> torch.Tensor:
    """Non-saturating discriminator complement."""
    return F.softplus(-d_real).mean() + F.softplus(d_fake).mean()


def hinge_g_loss(d_fake: torch.Tensor) -> torch.Tensor:
    """Patch-discriminator generator objective: push fake logits up."""
    return -d_fake.mean()


def hinge_d_loss(d_real: torch.Tensor, d_fake: torch.Tensor) -> torch.Tensor:
    return 0.5 * (F.relu(1.0 - d_real).mean() + F.relu(1.0 + d_fake).mean())


@dataclass(frozen=True)
class LossBundle:
    """Named scalar losses with their weights; total = sum(w_i * loss_i)."""

    losses: tuple[tuple[str, float], ...]
    weights: tuple[tuple[str, float], ...]
    total: float

    def __getitem__(self, name: str) -> float:
        for k, v in self.losses:
            if k == name:
                return v
        raise KeyError(name)

    def weight(self, name: str) -> float:
        for k, v in self.weights:
            if k == name:
                return v
        raise KeyError(name)


def make_bundle(named: dict[str, torch.Tensor], weights: dict[str, float]) -> tuple[torch.Tensor, LossBundle]:
    """Weighted total as a graph tensor plus a detached scalar record."""
    if set(named) != set(weights):
        raise TrainError(f"loss/weight name mismatch: {sorted(named)} vs {sorted(weights)}")
    total = None
    for name in sorted(named):
        term = weights[name] * named[name]
        total = term if total is None else total + term
    record = tuple((name, float(named[name].detach())) for name in sorted(named))
    for _, v in record:
        if not math.isfinite(v):
            raise TrainError(f"non-finite loss value in {dict(record)}")
    bundle = LossBundle(
        losses=record,
        weights=tuple(sorted(weights.items())),
        total=float(total.detach()),
    )
    return total, bundle


def stage1_adv_active(step: int, total_steps: int, delay_fraction: float) -> bool:
    """The reconstruction stage turns its adversarial term on late."""
    if not 0.0 <= delay_fraction <= 1.0:
        raise TrainError(f"delay fraction {delay_fraction} outside [0, 1]")
    return step >= int(delay_fraction * total_steps)


def stage1_losses(
    x: torch.Tensor,
    x_hat: torch.Tensor,
    perceptual,
    patch_disc,
    step: int,
    total_steps: int,
    delay_fraction: float = 0.25,
    l1_weight: float = 1.0,
    perceptual_weight: float = 1.0,
    adv_weight: float = 1.0,
) -> tuple[torch.Tensor, LossBundle]:
    """Pixel L1 + fixed-extractor perceptual + delayed patch adversarial."""
    if x.shape != x_hat.shape:
        raise TrainError(f"image shapes differ: {tuple(x.shape)} vs {tuple(x_hat.shape)}")
    active = stage1_adv_active(step, total_steps, delay_fraction)
    named = {
        "l1": (x_hat - x).abs().mean(),
        "perceptual": perceptual(x_hat, x),
        "patch_adv": hinge_g_loss(patch_disc(x_hat)) if active else x.new_zeros(()),
    }
    weights = {
        "l1": l1_weight,
        "perceptual": perceptual_weight,
        "patch_adv": adv_weight if active else 0.0,
    }
    return make_bundle(named, weights)
