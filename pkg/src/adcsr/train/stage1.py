"""Reconstruction pretraining of the pruned decoder.

The teacher encoder is frozen; a fresh decoder at the pruned widths (input
conv included) learns to invert it under pixel L1, a random-feature
perceptual distance, and a late-start patch adversarial term. Every batch is
drawn statelessly from (seed, step), so interrupting and resuming from a
saved state reproduces the uninterrupted loss sequence exactly.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch

from .. import seeding
from ..checkpoint import load_checkpoint, save_checkpoint
from ..imaging import Image
from ..models.config import ArchConfig
from ..models.networks import Network, build_network
from ..models.store import WeightStore
from ..surgery import pruned_config
from .losses import TrainError, hinge_d_loss, stage1_losses
from .patch_disc import PatchDiscriminator
from .perceptual import RandomConvFeatures
from .state import LossLog, pack_adam, pack_module, unpack_adam, unpack_module

STAGE1_STATE_KIND = "stage1-state"


@dataclass(frozen=True)
class Stage1Hyper:
    steps: int = 500
    batch_size: int = 4
    lr: float = 1e-3
    disc_lr: float = 1e-3
    delay_fraction: float = 0.25
    l1_weight: float = 1.0
    perceptual_weight: float = 1.0
    adv_weight: float = 1.0
    seed: int = 0
    save_every: int = 0

    def validate(self) -> None:
        if self.steps < 1 or self.batch_size < 1:
            raise TrainError("steps and batch_size must be >= 1")
        if not 0.0 <= self.delay_fraction <= 1.0:
            raise TrainError(f"delay fraction {self.delay_fraction} outside [0, 1]")
        if self.lr <= 0 or self.disc_lr <= 0:
            raise TrainError("learning rates must be positive")


def stage1_config(teacher_cfg: ArchConfig, keep_dec: float) -> ArchConfig:
    """Teacher architecture with only the decoder widths pruned."""
    return pruned_config(teacher_cfg, 1.0, keep_dec)


def images_to_tensor(images) -> torch.Tensor:
    """list[Image] or (N, 3, H, W) float array -> float32 tensor."""
    if isinstance(images, np.ndarray):
        arr = images
    else:
        arr = np.stack([im.data if isinstance(im, Image) else np.asarray(im) for im in images])
    if arr.ndim != 4 or arr.shape[1] != 3:
        raise TrainError(f"expected (N, 3, H, W) images, got {arr.shape}")
    return torch.from_numpy(np.ascontiguousarray(arr.astype(np.float32)))


def _batch_indices(seed: int, stage: str, step: int, n: int, batch: int) -> torch.Tensor:
    idx = seeding.generator(seed, stage, "batch", step).integers(0, n, size=batch)
    return torch.from_numpy(idx)


def _save_state(path, cfg, net_module, pdisc, g_opt, g_named, d_opt, d_named, step, hyper, kind):
    ws = WeightStore()
    pack_module(net_module, "model", ws)
    if pdisc is not None:
        pack_module(pdisc, "pdisc", ws)
    pack_adam(g_opt, g_named, "opt-g", ws)
    if d_opt is not None:
        pack_adam(d_opt, d_named, "opt-d", ws)
    save_checkpoint(path, cfg, ws, extra={"kind": kind, "step": step, "hyper": asdict(hyper)})


def step_state_path(state_path, step: int):
    """Periodic snapshots live beside the final state, step-stamped."""
    p = Path(state_path)
    return p.with_name(f"{p.stem}-step{step:06d}{p.suffix}")


def _check_resume(ck, cfg, hyper, kind, path):
    if ck.extra.get("kind") != kind:
        raise TrainError(f"{path}: expected a {kind} checkpoint, got {ck.extra.get('kind')!r}")
    if ck.config != cfg:
        raise TrainError(f"{path}: state was saved for a different config")
    saved = dict(ck.extra.get("hyper", {}))
    current = asdict(hyper)
    saved.pop("save_every", None)
    current.pop("save_every", None)
    if saved != current:
        diff = {k: (saved.get(k), current.get(k)) for k in set(saved) | set(current)
                if saved.get(k) != current.get(k)}
        raise TrainError(f"{path}: resume hyperparameters differ from saved run: {diff}")
    return int(ck.extra["step"])


def run_stage1(
    decoder_cfg: ArchConfig,
    encoder_net: Network,
    images,
    hyper: Stage1Hyper,
    log_path,
    state_path=None,
    resume_from=None,
) -> WeightStore:
    """Train the fresh pruned decoder against the frozen teacher encoder.

    Returns the full weight store of the stage-1 network (teacher encoder
    plus trained decoder), ready to save as the pretrained-decoder artifact.
    """
    hyper.validate()
    if decoder_cfg.vae.encoder_channels != encoder_net.cfg.vae.encoder_channels or (
        decoder_cfg.vae.latent_channels != encoder_net.cfg.vae.latent_channels
    ):
        raise TrainError("decoder config and encoder network disagree on the VAE encoder")

    x_all = images_to_tensor(images)
    n = x_all.shape[0]
    f = decoder_cfg.vae.downsample_factor
    if x_all.shape[-2] % f or x_all.shape[-1] % f:
        raise TrainError(f"image size {tuple(x_all.shape[-2:])} not divisible by VAE factor {f}")

    net = build_network(decoder_cfg, seed=seeding.derive_seed(hyper.seed, "stage1", "init"))
    net.module.encoder.load_state_dict(encoder_net.module.encoder.state_dict())
    net.module.train(False)
    for p in net.module.parameters():
        p.requires_grad_(False)
    decoder = net.module.decoder
    for p in decoder.parameters():
        p.requires_grad_(True)

    perceptual = RandomConvFeatures(seed=hyper.seed)
    pdisc = PatchDiscriminator(seed=hyper.seed)
    g_named = [(f"decoder.{k}", p) for k, p in decoder.named_parameters()]
    d_named = list(pdisc.named_parameters())
    g_opt = torch.optim.Adam([p for _, p in g_named], lr=hyper.lr, betas=(0.9, 0.999))
    d_opt = torch.optim.Adam([p for _, p in d_named], lr=hyper.disc_lr, betas=(0.9, 0.999))

    start = 0
    if resume_from is not None:
        ck = load_checkpoint(resume_from)
        start = _check_resume(ck, decoder_cfg, hyper, STAGE1_STATE_KIND, resume_from)
        unpack_module(net.module, "model", ck.weights)
        unpack_module(pdisc, "pdisc", ck.weights)
        unpack_adam(g_opt, g_named, "opt-g", ck.weights)
        unpack_adam(d_opt, d_named, "opt-d", ck.weights)

    log = LossLog(log_path, append=resume_from is not None)
    try:
        for step in range(start, hyper.steps):
            idx = _batch_indices(hyper.seed, "stage1", step, n, hyper.batch_size)
            x = x_all[idx]
            with torch.no_grad():
                z = net.module.encoder.encode(x)
            x_hat = decoder(z)

            active = step >= int(hyper.delay_fraction * hyper.steps)
            d_value = 0.0
            if active:
                d_opt.zero_grad()
                d_loss = hinge_d_loss(pdisc(x), pdisc(x_hat.detach()))
                d_loss.backward()
                d_opt.step()
                d_value = float(d_loss.detach())

            g_opt.zero_grad()
            try:
                total, bundle = stage1_losses(
                    x, x_hat, perceptual, pdisc, step, hyper.steps,
                    delay_fraction=hyper.delay_fraction,
                    l1_weight=hyper.l1_weight,
                    perceptual_weight=hyper.perceptual_weight,
                    adv_weight=hyper.adv_weight,
                )
            except TrainError as e:
                raise TrainError(f"aborting at step {step}: {e}") from e
            if not math.isfinite(bundle.total):
                raise TrainError(f"non-finite total loss at step {step}")
            total.backward()
            g_opt.step()

            for name, value in bundle.losses:
                log.record(step, name, value)
            log.record(step, "total", bundle.total)
            log.record(step, "patch_disc", d_value)
            log.flush()

            done = step + 1
            if state_path and hyper.save_every and done % hyper.save_every == 0 and done < hyper.steps:
                _save_state(step_state_path(state_path, done), decoder_cfg, net.module, pdisc,
                            g_opt, g_named, d_opt, d_named, done, hyper, STAGE1_STATE_KIND)
    finally:
        log.close()

    if state_path:
        _save_state(state_path, decoder_cfg, net.module, pdisc, g_opt, g_named,
                    d_opt, d_named, hyper.steps, hyper, STAGE1_STATE_KIND)
    return net.weights()
