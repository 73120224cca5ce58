"""Network construction: determinism, layout, and forward shape contracts."""

import numpy as np
import pytest
import torch

from adcsr.models.config import ConfigError
from adcsr.models.networks import BuildError, build_network
from adcsr.models.pipelines import (
    conditioning_context,
    student_forward_features,
    student_forward_image,
    teacher_forward_image,
    teacher_latent,
    vae_reconstruct,
)
from adcsr.presets import get_preset


def test_build_determinism_same_seed(micro_teacher_cfg):
    a = build_network(micro_teacher_cfg, seed=7)
    b = build_network(micro_teacher_cfg, seed=7)
    wa, wb = a.weights(), b.weights()
    assert sorted(wa.keys()) == sorted(wb.keys())
    for k in wa:
        assert np.array_equal(wa[k], wb[k]), k


def test_build_seed_changes_weights(micro_teacher_cfg):
    a = build_network(micro_teacher_cfg, seed=7)
    b = build_network(micro_teacher_cfg, seed=8)
    diffs = sum(not np.array_equal(a.weights()[k], b.weights()[k]) for k in a.weights())
    assert diffs > 0


def test_weights_roundtrip_strict(micro_teacher_cfg, micro_teacher_net):
    ws = micro_teacher_net.weights()
    other = build_network(micro_teacher_cfg, seed=99)
    other.load_weights(ws)
    for k, v in other.weights().items():
        assert np.array_equal(v, ws[k]), k
    # dropping a tensor must be rejected
    broken = type(ws)()
    for i, (k, v) in enumerate(ws.items()):
        if i:
            broken[k] = v
    with pytest.raises(Exception):
        other.load_weights(broken)


def test_teacher_forward_shapes(micro_teacher_net):
    x_lr = torch.rand(2, 3, 8, 8)
    z = teacher_latent(micro_teacher_net, x_lr)
    # VAE factor 8 on the 4x upscaled input: 32 -> 4
    assert z.shape == (2, 2, 4, 4)
    out = teacher_forward_image(micro_teacher_net, x_lr)
    assert out.shape == (2, 3, 32, 32)
    assert float(out.min()) >= 0.0 and float(out.max()) <= 1.0


def test_student_forward_shapes(micro_student_cfg):
    student = build_network(micro_student_cfg, seed=3)
    x_lr = torch.rand(2, 3, 8, 8)
    f = student_forward_features(student, x_lr)
    assert f.shape[0] == 2 and f.shape[1] == micro_student_cfg.vae.decoder_channels[0]
    out = student_forward_image(student, x_lr)
    assert out.shape == (2, 3, 32, 32)


def test_vae_reconstruct_shape(micro_teacher_net):
    x = torch.rand(2, 3, 32, 32)
    y = vae_reconstruct(micro_teacher_net, x)
    assert y.shape == x.shape


def test_conditioning_context_profile(micro_teacher_net):
    ctx = conditioning_context(micro_teacher_net.module, 3)
    assert ctx is not None
    assert ctx.shape == (3, 2, 8)  # tokens x width from the conditioning spec
    mini = build_network(get_preset("mini-teacher"), seed=0)
    assert conditioning_context(mini.module, 3) is None


def test_mini_teacher_param_count():
    net = build_network(get_preset("mini-teacher"), seed=0)
    total = sum(int(v.size) for v in net.weights().values())
    assert total == 16_407_887


def test_time_embedding_flag_controls_layer(micro_teacher_cfg):
    net = build_network(micro_teacher_cfg, seed=0)
    names = set(net.weights().keys())
    assert any(k.startswith("unet.time_embed.") for k in names)
    student = build_network(get_preset("micro-student"), seed=0)
    assert not any(k.startswith("unet.time_embed.") for k in student.weights())
    assert not any(".attn2." in k for k in student.weights())


def test_forward_determinism(micro_teacher_net):
    x = torch.rand(2, 3, 8, 8, generator=torch.Generator().manual_seed(5))
    with torch.no_grad():
        a = teacher_forward_image(micro_teacher_net, x)
        b = teacher_forward_image(micro_teacher_net, x)
    assert torch.equal(a, b)
