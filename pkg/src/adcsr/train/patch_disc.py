"""Patch discriminator for the reconstruction stage: 4 strided conv layers."""

from __future__ import annotations

import torch
from torch import nn

from .. import seeding


class PatchDiscriminator(nn.Module):
    """Image -> per-patch logit map (stride-8 receptive grid)."""

    def __init__(self, seed: int, widths: tuple[int, ...] = (64, 128, 256)):
        super().__init__()
        layers = []
        c_in = 3
        for i, w in enumerate(widths):
            layers.append(nn.Conv2d(c_in, w, 4, stride=2, padding=1))
            if i > 0:
                layers.append(nn.GroupNorm(8, w))
            layers.append(nn.LeakyReLU(0.2))
            c_in = w
        layers.append(nn.Conv2d(c_in, 1, 4, stride=1, padding=1))
        self.net = nn.Sequential(*layers)
        self._init(seed)

    def _init(self, seed: int) -> None:
        g = seeding.torch_generator(seed, "patch-disc")
        with torch.no_grad():
            for m in self.net:
                if isinstance(m, nn.Conv2d):
                    m.weight.normal_(0.0, 0.02, generator=g)
                    m.bias.zero_()
                elif isinstance(m, nn.GroupNorm):
                    m.weight.fill_(1.0)
                    m.bias.zero_()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.net(x * 2.0 - 1.0)
