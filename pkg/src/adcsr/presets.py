"""Shipped architecture presets and the surgery plans that derive students.

Per-level sequences are ordered smallest spatial size first. The mini teacher
runs 16x16 LR -> 64x64 SR with an 8x8 latent; the sd21-mirror reproduces the
full-scale topology for static cost accounting only (never built as tensors
in tests; construction still works).
"""

from __future__ import annotations

from .models.config import (
    TEACHER,
    ArchConfig,
    ConditioningSpec,
    UNetSpec,
    VAESpec,
)
from .surgery import SurgeryPlan, student_config


def mini_teacher() -> ArchConfig:
    """Desk-scale one-step SR teacher: 3-level UNet, bottom self-attention,
    time embedding, no cross-attention (null conditioning profile)."""
    return ArchConfig(
        role=TEACHER,
        unet=UNetSpec(
            in_channels=4, out_channels=4,
            channels=(32, 64, 128), blocks_per_level=2,
            self_attention=(True, False, False), mid_attention=True,
            cross_attention=False, time_embedding=True,
            head_dim=8, norm_groups=16),
        vae=VAESpec(
            latent_channels=4, encoder_present=True,
            encoder_channels=(256, 128, 64, 32), encoder_blocks=2,
            decoder_channels=(256, 128, 64, 32), decoder_blocks=2,
            encoder_mid_attention=True, decoder_mid_attention=True,
            norm_groups=16, decoder_norm_groups=16),
    )


def micro_teacher() -> ArchConfig:
    """Smallest config that still exercises every structure: cross-attention,
    time embedding, encoder, mid attention. Test corpus + MAC oracle use it."""
    return ArchConfig(
        role=TEACHER,
        unet=UNetSpec(
            in_channels=2, out_channels=2,
            channels=(8, 16), blocks_per_level=1,
            self_attention=(True, False), mid_attention=True,
            cross_attention=True, time_embedding=True,
            head_dim=4, norm_groups=4),
        vae=VAESpec(
            latent_channels=2, encoder_present=True,
            encoder_channels=(16, 8, 8, 8), encoder_blocks=1,
            decoder_channels=(16, 8, 8, 8), decoder_blocks=1,
            encoder_mid_attention=True, decoder_mid_attention=True,
            norm_groups=4, decoder_norm_groups=4),
        conditioning=ConditioningSpec(tokens=2, width=8, kind="embedding"),
    )


def sd21_mirror() -> ArchConfig:
    """Full-scale topology mirror for cost accounting: 4-level UNet at base
    width 320, attention everywhere but the smallest level, 77-token
    cross-attention at width 1024, VAE at base 128 with a 3-block decoder.
    The text encoder and prompt extractor are external components whose
    sizes come from the aux table."""
    return ArchConfig(
        role=TEACHER,
        unet=UNetSpec(
            in_channels=4, out_channels=4,
            channels=(1280, 1280, 640, 320), blocks_per_level=2,
            self_attention=(False, True, True, True), mid_attention=True,
            cross_attention=True, time_embedding=True,
            head_dim=8, norm_groups=32),
        vae=VAESpec(
            latent_channels=4, encoder_present=True,
            encoder_channels=(512, 512, 256, 128), encoder_blocks=2,
            decoder_channels=(512, 512, 256, 128), decoder_blocks=3,
            encoder_mid_attention=True, decoder_mid_attention=True,
            norm_groups=32, decoder_norm_groups=32),
        conditioning=ConditioningSpec(tokens=77, width=1024, kind="external"),
        external_components=("text_encoder", "prompt_extractor"),
    )


def default_plan() -> SurgeryPlan:
    """The shipped compression plan: keep 75% UNet / 50% decoder channels,
    all three removal transforms on, pixel unshuffle factor 2."""
    return SurgeryPlan(eliminate_encoder=True, remove_text_time=True,
                       optimize_connection=True, keep_unet=0.75, keep_dec=0.5,
                       unshuffle_factor=2)


def mini_student() -> ArchConfig:
    return student_config(mini_teacher(), default_plan())


def micro_student() -> ArchConfig:
    return student_config(micro_teacher(), default_plan())


def sd21_student() -> ArchConfig:
    return student_config(sd21_mirror(), default_plan())


PRESETS = {
    "mini-teacher": mini_teacher,
    "mini-student": mini_student,
    "micro-teacher": micro_teacher,
    "micro-student": micro_student,
    "sd21-mirror": sd21_mirror,
    "sd21-student": sd21_student,
}


def get_preset(name: str) -> ArchConfig:
    try:
        return PRESETS[name]()
    except KeyError:
        known = ", ".join(sorted(PRESETS))
        raise KeyError(f"unknown preset {name!r} (known: {known})") from None
