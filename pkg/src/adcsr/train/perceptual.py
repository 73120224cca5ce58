"""Seed-deterministic random-feature perceptual distance.

A stack of frozen, randomly initialized strided convolutions stands in for a
pretrained perceptual network: random projections preserve enough structure
to compare textures, and nothing external is downloaded. Any callable with
the same (x, y) -> scalar signature can replace it at larger scales.
"""

from __future__ import annotations

import math

import torch
from torch import nn

from .. import seeding


class RandomConvFeatures(nn.Module):
    """Three stride-2 conv stages; distance = mean of per-stage L1 gaps."""

    def __init__(self, seed: int, widths: tuple[int, ...] = (16, 32, 64)):
        super().__init__()
        layers = []
        c_in = 3
        for i, w in enumerate(widths):
            conv = nn.Conv2d(c_in, w, 3, stride=2, padding=1)
            g = seeding.torch_generator(seed, "perceptual", i)
            # He-scaled Gaussian keeps activation magnitude roughly constant
            # through the stack, so later stages still carry signal.
            std = math.sqrt(2.0 / (c_in * 9))
            with torch.no_grad():
                conv.weight.normal_(0.0, std, generator=g)
                conv.bias.zero_()
            layers.append(conv)
            c_in = w
        self.convs = nn.ModuleList(layers)
        for p in self.parameters():
            p.requires_grad_(False)

    def features(self, x: torch.Tensor) -> list[torch.Tensor]:
        h = x * 2.0 - 1.0
        out = []
        for conv in self.convs:
            h = nn.functional.leaky_relu(conv(h), 0.2)
            out.append(h)
        return out

    def forward(self, x: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
        fx = self.features(x)
        fy = self.features(y)
        terms = [(a - b).abs().mean() for a, b in zip(fx, fy)]
        return torch.stack(terms).mean()
