"""Shared fixtures. Session scope keeps the heavier builds to one instance."""

import numpy as np
import pytest
import torch

from adcsr import seeding
from adcsr.degrade import demo_hr_images, realesrgan_lite, synth_pair
from adcsr.models.networks import build_network
from adcsr.presets import get_preset


@pytest.fixture(scope="session")
def micro_teacher_cfg():
    return get_preset("micro-teacher")


@pytest.fixture(scope="session")
def micro_student_cfg():
    return get_preset("micro-student")


@pytest.fixture(scope="session")
def micro_teacher_net(micro_teacher_cfg):
    return build_network(micro_teacher_cfg, seed=1234)


@pytest.fixture(scope="session")
def micro_pairs():
    """Eight 32x32 HR / 8x8 LR pairs, fixed seed."""
    hrs = demo_hr_images(8, 32, 77)
    recipe = realesrgan_lite()
    pairs = [synth_pair(h, recipe, i, 77) for i, h in enumerate(hrs)]
    return [p[0] for p in pairs], [p[1] for p in pairs]


@pytest.fixture
def rng():
    return np.random.default_rng(2024)


@pytest.fixture
def torch_gen():
    g = torch.Generator()
    g.manual_seed(2024)
    return g


def store_digest(ws) -> dict:
    """name -> bytes hash of each tensor, for exact-change bookkeeping."""
    import hashlib
    return {k: hashlib.sha256(np.ascontiguousarray(v).tobytes()).hexdigest()
            for k, v in ws.items()}
