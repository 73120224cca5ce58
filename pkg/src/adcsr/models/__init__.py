from .config import (
    ArchConfig,
    BridgeSpec,
    ConditioningSpec,
    ConfigError,
    ScheduleSpec,
    UNetSpec,
    VAESpec,
    config_hash,
    from_json,
    to_json,
)
from .schedule import NoiseSchedule, make_alpha_bar, one_step_denoise
from .networks import Network, build_modules, build_network, init_weights, weight_layout
from .pipelines import (
    gt_features,
    student_forward_features,
    student_forward_image,
    teacher_forward_features,
    teacher_forward_image,
)

__all__ = [
    "ArchConfig", "BridgeSpec", "ConditioningSpec", "ConfigError", "ScheduleSpec",
    "UNetSpec", "VAESpec", "config_hash", "from_json", "to_json",
    "NoiseSchedule", "make_alpha_bar", "one_step_denoise",
    "Network", "build_modules", "build_network", "init_weights", "weight_layout",
    "gt_features", "student_forward_features", "student_forward_image",
    "teacher_forward_features", "teacher_forward_image",
]
