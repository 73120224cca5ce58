"""Feature-space discriminator built from a frozen copy of the teacher UNet.

Only two groups train: a fresh input conv that adapts the feature channel
count, and rank-R LoRA adapters on every attention projection. The LoRA
up-projections start at zero, so at initialization the adapters contribute
nothing and the backbone responds exactly as pretrained.
"""

from __future__ import annotations

import copy

import torch
from torch import nn

from .. import seeding
from ..models.networks import Attention, Network
from .losses import TrainError


class LoRALinear(nn.Module):
    """base(x) + up(down(x)) with a frozen base projection."""

    def __init__(self, base: nn.Linear, rank: int, gen: torch.Generator):
        super().__init__()
        if rank < 1:
            raise TrainError(f"LoRA rank must be >= 1, got {rank}")
        self.base = base
        self.down = nn.Linear(base.in_features, rank, bias=False)
        self.up = nn.Linear(rank, base.out_features, bias=False)
        with torch.no_grad():
            self.down.weight.normal_(0.0, 0.02, generator=gen)
            self.up.weight.zero_()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.base(x) + self.up(self.down(x))


_PROJECTIONS = ("to_q", "to_k", "to_v", "to_out")


class FeatureDiscriminator(nn.Module):
    """Teacher-UNet backbone scoring decoder-level feature maps.

    forward(f) keeps the input's spatial grid: the backbone output is
    averaged over channels into a per-position logit map (B, 1, H, W).
    """

    def __init__(self, teacher: Network, feature_channels: int, rank: int = 4, seed: int = 0):
        super().__init__()
        cfg = teacher.cfg
        self.t_index = cfg.schedule.t_index
        self.uses_time = cfg.unet.time_embedding
        self.uses_context = cfg.unet.cross_attention
        self.backbone = copy.deepcopy(teacher.module.unet)
        self.cond = copy.deepcopy(teacher.module.cond)
        if self.uses_context and self.cond is None:
            raise TrainError("teacher config uses cross-attention but has no conditioning")

        top = cfg.unet.channels[-1]
        first_conv = nn.Conv2d(feature_channels, top, 3, padding=1)
        g = seeding.torch_generator(seed, "disc", "first-conv")
        with torch.no_grad():
            first_conv.weight.normal_(0.0, 0.02, generator=g)
            first_conv.bias.zero_()
        # Registered once, through the backbone, so state dicts stay flat.
        self.backbone.conv_in = first_conv

        self.lora_count = 0
        for name, mod in sorted(self.backbone.named_modules()):
            if isinstance(mod, Attention):
                for proj in _PROJECTIONS:
                    base = getattr(mod, proj)
                    gen = seeding.torch_generator(seed, "disc", "lora", f"{name}.{proj}")
                    setattr(mod, proj, LoRALinear(base, rank, gen))
                    self.lora_count += 1

        for p in self.parameters():
            p.requires_grad_(False)
        for p in self.first_conv.parameters():
            p.requires_grad_(True)
        for mod in self.modules():
            if isinstance(mod, LoRALinear):
                mod.down.weight.requires_grad_(True)
                mod.up.weight.requires_grad_(True)

    @property
    def first_conv(self) -> nn.Conv2d:
        return self.backbone.conv_in

    def trainable_names(self) -> list[str]:
        return [n for n, p in self.named_parameters() if p.requires_grad]

    def trainable_parameters(self) -> list[torch.nn.Parameter]:
        return [p for p in self.parameters() if p.requires_grad]

    def forward(self, f: torch.Tensor) -> torch.Tensor:
        if f.ndim != 4 or f.shape[1] != self.first_conv.in_channels:
            raise TrainError(
                f"discriminator expects (B, {self.first_conv.in_channels}, H, W), "
                f"got {tuple(f.shape)}"
            )
        t = None
        if self.uses_time:
            t = torch.full((f.shape[0],), self.t_index, dtype=torch.long, device=f.device)
        ctx = None
        if self.uses_context:
            ctx = self.cond(f.shape[0]).to(f.dtype)
        out = self.backbone(f, t=t, ctx=ctx)
        logits = out.mean(dim=1, keepdim=True)
        if logits.shape[-2:] != f.shape[-2:]:
            raise TrainError(
                f"logit grid {tuple(logits.shape[-2:])} lost the input grid {tuple(f.shape[-2:])}"
            )
        return logits
