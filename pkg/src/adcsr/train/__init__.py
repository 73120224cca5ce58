"""Two-stage training: decoder pretraining, then adversarial distillation."""

from .discriminator import FeatureDiscriminator, LoRALinear
from .losses import (
    LossBundle,
    TrainError,
    adv_disc_loss,
    adv_gen_loss,
    distill_loss,
    hinge_d_loss,
    hinge_g_loss,
    make_bundle,
    stage1_adv_active,
    stage1_losses,
)
from .patch_disc import PatchDiscriminator
from .perceptual import RandomConvFeatures
from .stage1 import STAGE1_STATE_KIND, Stage1Hyper, images_to_tensor, run_stage1, stage1_config
from .stage2 import (
    STAGE2_STATE_KIND,
    Stage2Hyper,
    TRAINABLE_PREFIXES,
    generator_lr,
    run_stage2,
    stage2_partition,
    transplant_stage1_decoder,
)
from .state import LossLog, loss_series, read_loss_log

__all__ = [
    "FeatureDiscriminator",
    "LoRALinear",
    "LossBundle",
    "LossLog",
    "PatchDiscriminator",
    "RandomConvFeatures",
    "STAGE1_STATE_KIND",
    "STAGE2_STATE_KIND",
    "Stage1Hyper",
    "Stage2Hyper",
    "TRAINABLE_PREFIXES",
    "TrainError",
    "adv_disc_loss",
    "adv_gen_loss",
    "distill_loss",
    "generator_lr",
    "hinge_d_loss",
    "hinge_g_loss",
    "images_to_tensor",
    "loss_series",
    "make_bundle",
    "read_loss_log",
    "run_stage1",
    "run_stage2",
    "stage1_adv_active",
    "stage1_config",
    "stage1_losses",
    "stage2_partition",
    "transplant_stage1_decoder",
]
