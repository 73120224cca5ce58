"""Adversarial feature distillation of the compressed student.

Trainable: the student UNet, the bridge conv, and the student's copy of the
first (latent-resolution) decoder blocks, initialized from the pretrained
stage-1 decoder. Frozen: the whole teacher, the stage-1 decoder that produces
f_teacher and the ground-truth features, and the remaining student decoder
stages. The feature discriminator alternates 1:1 with the generator on the
same batch; the generator re-queries it after its update.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import torch

from ..checkpoint import load_checkpoint
from ..models.networks import Network
from ..models.pipelines import gt_features, student_forward_features, teacher_forward_features
from ..models.store import WeightStore
from .discriminator import FeatureDiscriminator
from .losses import TrainError, adv_disc_loss, adv_gen_loss, make_bundle, distill_loss
from .stage1 import _batch_indices, _check_resume, _save_state, images_to_tensor, step_state_path
from .state import LossLog, pack_adam, pack_module, unpack_adam, unpack_module

STAGE2_STATE_KIND = "stage2-state"

# The student's level-1 chain: everything between the bridge output and the
# first decoder upsample.
TRAINABLE_PREFIXES = (
    "unet.",
    "bridge.",
    "decoder.mid_block1.",
    "decoder.mid_attn.",
    "decoder.mid_block2.",
)


@dataclass(frozen=True)
class Stage2Hyper:
    steps: int = 500
    batch_size: int = 4
    g_lr: float = 1e-4
    d_lr: float = 1e-6
    lambda_adv: float = 1.0
    lora_rank: int = 4
    seed: int = 0
    save_every: int = 0

    def validate(self) -> None:
        if self.steps < 1 or self.batch_size < 1:
            raise TrainError("steps and batch_size must be >= 1")
        if self.g_lr <= 0 or self.d_lr <= 0:
            raise TrainError("learning rates must be positive")
        if self.lambda_adv < 0:
            raise TrainError(f"lambda_adv must be >= 0, got {self.lambda_adv}")
        if self.lora_rank < 1:
            raise TrainError(f"lora_rank must be >= 1, got {self.lora_rank}")


def generator_lr(step: int, hyper: Stage2Hyper) -> float:
    """Base rate halved once at the midpoint of the run."""
    return hyper.g_lr * (0.5 if step >= hyper.steps // 2 else 1.0)


def stage2_partition(student: Network) -> tuple[list[str], list[str]]:
    """(trainable, frozen) student parameter names under the stage-2 masks."""
    trainable, frozen = [], []
    for name, _ in student.module.named_parameters():
        (trainable if name.startswith(TRAINABLE_PREFIXES) else frozen).append(name)
    return trainable, frozen


def transplant_stage1_decoder(student: Network, stage1: Network) -> int:
    """Copy pretrained decoder weights into the student (input conv excluded).

    Returns the number of tensors copied; width mismatches reject.
    """
    if student.cfg.vae.decoder_channels != stage1.cfg.vae.decoder_channels:
        raise TrainError(
            f"student decoder widths {student.cfg.vae.decoder_channels} != "
            f"stage-1 decoder widths {stage1.cfg.vae.decoder_channels}"
        )
    src = stage1.module.decoder.state_dict()
    dst = student.module.decoder.state_dict()
    copied = {}
    for name, value in src.items():
        if name.startswith("conv_in."):
            continue
        if name not in dst:
            raise TrainError(f"stage-1 decoder tensor {name!r} missing from student decoder")
        if dst[name].shape != value.shape:
            raise TrainError(
                f"decoder tensor {name!r} shape {tuple(value.shape)} != "
                f"student {tuple(dst[name].shape)}"
            )
        copied[name] = value
    dst.update(copied)
    student.module.decoder.load_state_dict(dst)
    return len(copied)


def _freeze_all(net: Network) -> None:
    net.module.train(False)
    for p in net.module.parameters():
        p.requires_grad_(False)


def run_stage2(
    student: Network,
    teacher: Network,
    stage1: Network,
    disc: FeatureDiscriminator,
    lr_images,
    hr_images,
    hyper: Stage2Hyper,
    log_path,
    state_path=None,
    resume_from=None,
) -> WeightStore:
    """Distill the teacher into the student with the adversarial objective.

    Returns the trained student's full weight store.
    """
    hyper.validate()
    lr_all = images_to_tensor(lr_images)
    hr_all = images_to_tensor(hr_images)
    if lr_all.shape[0] != hr_all.shape[0]:
        raise TrainError(f"{lr_all.shape[0]} LR vs {hr_all.shape[0]} HR images")
    if hr_all.shape[-2:] != (4 * lr_all.shape[-2], 4 * lr_all.shape[-1]):
        raise TrainError(
            f"HR size {tuple(hr_all.shape[-2:])} is not 4x the LR size {tuple(lr_all.shape[-2:])}"
        )
    n = lr_all.shape[0]

    _freeze_all(teacher)
    _freeze_all(stage1)
    student.module.train(False)
    trainable_names, _ = stage2_partition(student)
    if not trainable_names:
        raise TrainError("student has no trainable parameters under the stage-2 masks")
    for name, p in student.module.named_parameters():
        p.requires_grad_(name.startswith(TRAINABLE_PREFIXES))

    if resume_from is None:
        transplant_stage1_decoder(student, stage1)

    # Setup probe on the step-0 batch: the three feature paths must agree
    # before any training.
    with torch.no_grad():
        idx0 = _batch_indices(hyper.seed, "stage2", 0, n, hyper.batch_size)
        probe_lr, probe_hr = lr_all[idx0], hr_all[idx0]
        f_t, _ = teacher_forward_features(teacher, stage1, probe_lr, level=1)
        f_gt = gt_features(stage1, stage1, probe_hr, level=1)
        f_s = student_forward_features(student, probe_lr)
    if not (f_s.shape == f_t.shape == f_gt.shape):
        raise TrainError(
            f"feature shape mismatch before training: student {tuple(f_s.shape)}, "
            f"teacher {tuple(f_t.shape)}, ground-truth {tuple(f_gt.shape)}"
        )

    g_named = [(n_, p) for n_, p in student.module.named_parameters() if p.requires_grad]
    d_named = [(n_, p) for n_, p in disc.named_parameters() if p.requires_grad]
    g_opt = torch.optim.Adam([p for _, p in g_named], lr=hyper.g_lr, betas=(0.9, 0.999))
    d_opt = torch.optim.Adam([p for _, p in d_named], lr=hyper.d_lr, betas=(0.9, 0.999))
    use_adv = hyper.lambda_adv > 0.0

    start = 0
    if resume_from is not None:
        ck = load_checkpoint(resume_from)
        start = _check_resume(ck, student.cfg, hyper, STAGE2_STATE_KIND, resume_from)
        unpack_module(student.module, "model", ck.weights)
        unpack_module(disc, "pdisc", ck.weights)
        unpack_adam(g_opt, g_named, "opt-g", ck.weights)
        unpack_adam(d_opt, d_named, "opt-d", ck.weights)

    log = LossLog(log_path, append=resume_from is not None)
    try:
        for step in range(start, hyper.steps):
            for group in g_opt.param_groups:
                group["lr"] = generator_lr(step, hyper)

            idx = _batch_indices(hyper.seed, "stage2", step, n, hyper.batch_size)
            x_lr, x_hr = lr_all[idx], hr_all[idx]
            with torch.no_grad():
                f_t, _ = teacher_forward_features(teacher, stage1, x_lr, level=1)
                f_gt = gt_features(stage1, stage1, x_hr, level=1)
            f_s = student_forward_features(student, x_lr)

            d_value = 0.0
            if use_adv:
                d_opt.zero_grad()
                d_loss = adv_disc_loss(disc(f_gt), disc(f_s.detach()))
                d_loss.backward()
                d_opt.step()
                d_value = float(d_loss.detach())

            g_opt.zero_grad()
            named = {"distill": distill_loss(f_s, f_t)}
            weights = {"distill": 1.0}
            if use_adv:
                named["adv_gen"] = adv_gen_loss(disc(f_s))
                weights["adv_gen"] = hyper.lambda_adv
            try:
                total, bundle = make_bundle(named, weights)
            except TrainError as e:
                raise TrainError(f"aborting at step {step}: {e}") from e
            if not math.isfinite(bundle.total):
                raise TrainError(f"non-finite total loss at step {step}")
            total.backward()
            g_opt.step()

            log.record(step, "distill", bundle["distill"])
            log.record(step, "adv_gen", bundle["adv_gen"] if use_adv else 0.0)
            log.record(step, "adv_disc", d_value)
            log.record(step, "total", bundle.total)
            log.flush()

            done = step + 1
            if state_path and hyper.save_every and done % hyper.save_every == 0 and done < hyper.steps:
                _save_state(step_state_path(state_path, done), student.cfg, student.module, disc,
                            g_opt, g_named, d_opt, d_named, done, hyper, STAGE2_STATE_KIND)
    finally:
        log.close()

    if state_path:
        _save_state(state_path, student.cfg, student.module, disc, g_opt, g_named,
                    d_opt, d_named, hyper.steps, hyper, STAGE2_STATE_KIND)
    return student.weights()
