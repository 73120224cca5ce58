"""Forward pipelines: teacher SR path, student SR path, distillation features.

All functions take and return torch tensors; images are (B, 3, H, W) in [0, 1]
and features are (B, C, h, w). Gradient flow is left to the caller: training
code wraps frozen paths in no_grad, tests may differentiate anything.
"""

from __future__ import annotations

import torch
import torch.nn.functional as F

from .. import SCALE_FACTOR
from ..imaging import Image, pixel_unshuffle, to_tensor
from .networks import AdcModel, Network
from .schedule import one_step_denoise, timestep_tensor


class PipelineError(ValueError):
    pass


def as_batch(x: Image | torch.Tensor) -> torch.Tensor:
    if isinstance(x, Image):
        return to_tensor(x)
    if not torch.is_tensor(x) or x.ndim != 4:
        raise PipelineError(f"expected an Image or a 4-D tensor, got {type(x).__name__}")
    return x


def _model(net: Network | AdcModel) -> AdcModel:
    return net.module if isinstance(net, Network) else net


def upscale_to_hr(x_lr: torch.Tensor, factor: int = SCALE_FACTOR) -> torch.Tensor:
    return F.interpolate(x_lr, scale_factor=float(factor),
                         mode="bicubic", antialias=True)


def conditioning_context(model: AdcModel, batch: int) -> torch.Tensor | None:
    if model.cond is None:
        return None
    return model.cond(batch)


def teacher_latent(teacher: Network | AdcModel, x_lr: torch.Tensor) -> torch.Tensor:
    """Bicubic-upscaled LR encoded to the latent grid by the teacher encoder."""
    m = _model(teacher)
    if m.encoder is None:
        raise PipelineError("teacher has no encoder")
    x_hr = upscale_to_hr(x_lr)
    f = m.cfg.vae.downsample_factor
    if x_hr.shape[-2] % f or x_hr.shape[-1] % f:
        raise PipelineError(
            f"upscaled size {tuple(x_hr.shape[-2:])} not divisible by VAE factor {f}")
    return m.encoder.encode(x_hr)


def teacher_denoised_latent(teacher: Network | AdcModel,
                            x_lr: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor | None]:
    """One-step denoised HR latent estimate plus the conditioning used."""
    m = _model(teacher)
    z = teacher_latent(m, x_lr)
    sched = m.noise_schedule()
    ctx = conditioning_context(m, z.shape[0])
    t = timestep_tensor(z.shape[0], sched.t_index) if m.unet.time_embed is not None else None
    eps = m.unet(z, t, ctx)
    return one_step_denoise(z, eps, sched.alpha_bar_t), ctx


def teacher_forward_features(teacher: Network | AdcModel,
                             stage1_decoder: Network | AdcModel,
                             x_lr: Image | torch.Tensor,
                             level: int) -> tuple[torch.Tensor, torch.Tensor | None]:
    """Distillation target: teacher's denoised latent run through the frozen
    pretrained decoder's input conv and first blocks down to `level`."""
    x = as_batch(x_lr)
    dec = _model(stage1_decoder).decoder
    z_hat, ctx = teacher_denoised_latent(teacher, x)
    return dec.run_to(dec.stem(z_hat), level), ctx


def teacher_forward_image(teacher: Network | AdcModel,
                          x_lr: Image | torch.Tensor) -> torch.Tensor:
    """Full teacher SR pass through its own decoder; clamped to [0, 1]."""
    x = as_batch(x_lr)
    m = _model(teacher)
    z_hat, _ = teacher_denoised_latent(m, x)
    return m.decoder(z_hat).clamp(0.0, 1.0)


def gt_features(encoder_net: Network | AdcModel,
                stage1_decoder: Network | AdcModel,
                x_hr: Image | torch.Tensor, level: int) -> torch.Tensor:
    """Real-feature path: ground truth encoded then run through the same
    frozen decoder blocks as the teacher features."""
    x = as_batch(x_hr)
    m = _model(encoder_net)
    if m.encoder is None:
        raise PipelineError("gt_features needs a network with an encoder")
    f = m.cfg.vae.downsample_factor
    if x.shape[-2] % f or x.shape[-1] % f:
        raise PipelineError(
            f"HR size {tuple(x.shape[-2:])} not divisible by VAE factor {f}")
    dec = _model(stage1_decoder).decoder
    return dec.run_to(dec.stem(m.encoder.encode(x)), level)


def _student_level1(student: AdcModel, x: torch.Tensor) -> torch.Tensor:
    cfg = student.cfg
    r = cfg.unshuffle_factor
    if x.shape[-2] % r or x.shape[-1] % r:
        raise PipelineError(
            f"LR size {tuple(x.shape[-2:])} not divisible by unshuffle factor {r}")
    h = student.unet(pixel_unshuffle(x, r))
    if student.bridge is None:
        raise PipelineError("student has no bridge conv")
    return student.decoder.run_to(student.bridge(h), 1)


def student_forward_features(student: Network | AdcModel,
                             x_lr: Image | torch.Tensor) -> torch.Tensor:
    """Student feature at the decoder's smallest spatial level (level 1)."""
    return _student_level1(_model(student), as_batch(x_lr))


def student_forward_image(student: Network | AdcModel,
                          x_lr: Image | torch.Tensor) -> torch.Tensor:
    """End-to-end student SR: 4x the LR size, clamped to [0, 1]."""
    x = as_batch(x_lr)
    m = _model(student)
    f1 = _student_level1(m, x)
    out = m.decoder.run_from(f1, 1).clamp(0.0, 1.0)
    expect = (x.shape[-2] * SCALE_FACTOR, x.shape[-1] * SCALE_FACTOR)
    if tuple(out.shape[-2:]) != expect:
        raise PipelineError(
            f"student output {tuple(out.shape[-2:])} != expected {expect}; "
            "decoder upsample factor and unshuffle factor are inconsistent")
    return out


def vae_reconstruct(net: Network | AdcModel, x: torch.Tensor) -> torch.Tensor:
    """Autoencoder round trip used when training the small-scale VAE."""
    m = _model(net)
    if m.encoder is None:
        raise PipelineError("reconstruction needs an encoder")
    return m.decoder(m.encoder.encode(x))
