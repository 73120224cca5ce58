"""Architecture configuration: every network in the toolkit is built from one of these.

Ordering convention: all per-level sequences (UNet channel widths, attention
flags, VAE stage widths) run from the smallest spatial level to the largest.
For the UNet that means channels[-1] is the width at the input/output
resolution and channels[0] is the bottleneck width; the decoder's
decoder_channels[0] is the width of the blocks at latent resolution.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, replace

from .. import SCHEMA_VERSION

TEACHER = "teacher_full"
STUDENT = "student"

INPUT_ENCODER = "encoder"
INPUT_UNSHUFFLE = "pixel_unshuffle"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class UNetSpec:
    in_channels: int
    out_channels: int
    channels: tuple[int, ...]          # smallest spatial level first
    blocks_per_level: int
    self_attention: tuple[bool, ...]   # same ordering as channels
    mid_attention: bool
    cross_attention: bool
    time_embedding: bool
    head_dim: int
    norm_groups: int
    # When True the UNet ends at its final feature (bridge mode): no output norm/conv.
    final_projection: bool = True

    @property
    def levels(self) -> int:
        return len(self.channels)

    @property
    def top_width(self) -> int:
        """Width at the input/output resolution (the bridge taps this)."""
        return self.channels[-1]

    @property
    def time_dim(self) -> int:
        return 4 * self.top_width


@dataclass(frozen=True)
class VAESpec:
    latent_channels: int
    encoder_present: bool
    encoder_channels: tuple[int, ...]  # smallest spatial level first
    encoder_blocks: int
    decoder_channels: tuple[int, ...]  # smallest spatial level first
    decoder_blocks: int
    encoder_mid_attention: bool
    decoder_mid_attention: bool
    norm_groups: int
    decoder_norm_groups: int
    # When False the decoder starts at its mid blocks (bridge mode): no input conv.
    decoder_input_conv: bool = True

    @property
    def downsample_factor(self) -> int:
        return 2 ** (len(self.encoder_channels) - 1)

    @property
    def upsample_factor(self) -> int:
        return 2 ** (len(self.decoder_channels) - 1)

    @property
    def decoder_mid_width(self) -> int:
        return self.decoder_channels[0]


@dataclass(frozen=True)
class BridgeSpec:
    enabled: bool = False
    in_channels: int = 0
    out_channels: int = 0
    kernel: int = 3


@dataclass(frozen=True)
class ConditioningSpec:
    tokens: int
    width: int
    # "embedding" = learned table shipped with the model; "external" = produced
    # by an off-toolkit text pipeline accounted through aux sizes.
    kind: str = "embedding"


@dataclass(frozen=True)
class ScheduleSpec:
    steps: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02
    t_index: int = 999


@dataclass(frozen=True)
class ArchConfig:
    role: str
    unet: UNetSpec
    vae: VAESpec
    bridge: BridgeSpec = field(default_factory=BridgeSpec)
    conditioning: ConditioningSpec | None = None
    input_mode: str = INPUT_ENCODER
    unshuffle_factor: int = 1
    schedule: ScheduleSpec = field(default_factory=ScheduleSpec)
    # External teacher components (e.g. text encoder) whose cost comes from aux
    # size tables rather than structural counting.
    external_components: tuple[str, ...] = ()
    # Provenance only: the keep fractions that produced this config's widths.
    keep_ratio_unet: float = 1.0
    keep_ratio_decoder: float = 1.0
    schema_version: int = SCHEMA_VERSION

    def replace(self, **kw) -> "ArchConfig":
        return replace(self, **kw)


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ConfigError(msg)


def validate(cfg: ArchConfig) -> None:
    """Structural sanity checks shared by every role; raises ConfigError."""
    u, v = cfg.unet, cfg.vae
    _require(cfg.schema_version == SCHEMA_VERSION,
             f"schema_version {cfg.schema_version} != supported {SCHEMA_VERSION}")
    _require(cfg.role in (TEACHER, STUDENT), f"unknown role {cfg.role!r}")
    _require(len(u.channels) >= 1, "unet needs at least one level")
    _require(len(u.self_attention) == len(u.channels),
             "self_attention flags must match level count")
    _require(all(c >= 1 for c in u.channels), "unet widths must be >= 1")
    _require(u.blocks_per_level >= 1, "blocks_per_level must be >= 1")
    _require(u.head_dim >= 1, "head_dim must be >= 1")
    attn_widths = [c for c, f in zip(u.channels, u.self_attention) if f]
    if u.mid_attention:
        attn_widths.append(u.channels[0])
    for c in attn_widths:
        _require(c % u.head_dim == 0,
                 f"attention width {c} not divisible by head_dim {u.head_dim}")
    for c in u.channels:
        _require(c % u.norm_groups == 0,
                 f"unet width {c} not divisible by norm_groups {u.norm_groups}")
    _require(v.latent_channels >= 1, "latent_channels must be >= 1")
    _require(len(v.decoder_channels) >= 1, "decoder needs at least one stage")
    for c in v.decoder_channels:
        _require(c % v.decoder_norm_groups == 0,
                 f"decoder width {c} not divisible by norm_groups {v.decoder_norm_groups}")
    if v.encoder_present:
        _require(len(v.encoder_channels) >= 1, "encoder needs at least one stage")
        for c in v.encoder_channels:
            _require(c % v.norm_groups == 0,
                     f"encoder width {c} not divisible by norm_groups {v.norm_groups}")
        _require(v.downsample_factor == v.upsample_factor,
                 "encoder/decoder spatial factors must match when the encoder exists")
    if cfg.input_mode == INPUT_ENCODER:
        _require(v.encoder_present, "encoder input mode requires an encoder")
        _require(u.in_channels == v.latent_channels,
                 f"unet in_channels {u.in_channels} != latent {v.latent_channels}")
    elif cfg.input_mode == INPUT_UNSHUFFLE:
        r = cfg.unshuffle_factor
        _require(r >= 1, f"unshuffle factor must be >= 1, got {r}")
        _require(u.in_channels == 3 * r * r,
                 f"unet in_channels {u.in_channels} != 3*r^2 = {3 * r * r}")
    else:
        raise ConfigError(f"unknown input_mode {cfg.input_mode!r}")
    if u.cross_attention:
        _require(cfg.conditioning is not None,
                 "cross_attention requires a conditioning spec")
    if cfg.conditioning is not None:
        _require(cfg.conditioning.tokens >= 1 and cfg.conditioning.width >= 1,
                 "conditioning tokens/width must be >= 1")
        _require(cfg.conditioning.kind in ("embedding", "external"),
                 f"unknown conditioning kind {cfg.conditioning.kind!r}")
    if cfg.bridge.enabled:
        _require(not u.final_projection,
                 "bridge requires the unet final projection to be removed")
        _require(not v.decoder_input_conv,
                 "bridge requires the decoder input conv to be removed")
        _require(cfg.bridge.in_channels == u.top_width,
                 f"bridge in {cfg.bridge.in_channels} != unet top width {u.top_width}")
        _require(cfg.bridge.out_channels == v.decoder_mid_width,
                 f"bridge out {cfg.bridge.out_channels} != decoder width {v.decoder_mid_width}")
    else:
        _require(u.final_projection and v.decoder_input_conv,
                 "without a bridge both boundary layers must be present")
        _require(u.out_channels == v.latent_channels,
                 f"unet out_channels {u.out_channels} != latent {v.latent_channels}")
    for r in (cfg.keep_ratio_unet, cfg.keep_ratio_decoder):
        _require(0.0 < r <= 1.0, f"keep ratio {r} outside (0, 1]")
    sch = cfg.schedule
    _require(0 <= sch.t_index < sch.steps, "schedule t_index out of range")
    _require(0.0 < sch.beta_start <= sch.beta_end < 1.0, "invalid beta bounds")


def check_student_structure(cfg: ArchConfig) -> None:
    """Strict invariants for a fully compressed student config."""
    validate(cfg)
    _require(cfg.role == STUDENT, f"expected student role, got {cfg.role!r}")
    _require(not cfg.unet.cross_attention, "student must not have cross-attention")
    _require(not cfg.unet.time_embedding, "student must not have a time embedding")
    _require(not cfg.vae.encoder_present, "student must not carry the VAE encoder")
    _require(cfg.input_mode == INPUT_UNSHUFFLE, "student input must be pixel_unshuffle")
    _require(cfg.bridge.enabled, "student must use the bridge connection")


# ---------------------------------------------------------------------------
# Serialization: human-readable JSON with a mandatory schema_version.


def to_json(cfg: ArchConfig) -> str:
    return json.dumps(asdict(cfg), indent=2, sort_keys=True)


def _tupled(d: dict, keys: tuple[str, ...]) -> dict:
    return {k: (tuple(v) if k in keys else v) for k, v in d.items()}


def from_json(text: str) -> ArchConfig:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"config is not valid JSON: {e}") from e
    if not isinstance(raw, dict) or "schema_version" not in raw:
        raise ConfigError("config is missing the mandatory schema_version field")
    if raw["schema_version"] != SCHEMA_VERSION:
        raise ConfigError(
            f"unsupported schema_version {raw['schema_version']} (expected {SCHEMA_VERSION})")
    try:
        unet = UNetSpec(**_tupled(raw["unet"], ("channels", "self_attention")))
        vae = VAESpec(**_tupled(raw["vae"], ("encoder_channels", "decoder_channels")))
        bridge = BridgeSpec(**raw.get("bridge", {}))
        cond = raw.get("conditioning")
        conditioning = ConditioningSpec(**cond) if cond is not None else None
        schedule = ScheduleSpec(**raw.get("schedule", {}))
        cfg = ArchConfig(
            role=raw["role"], unet=unet, vae=vae, bridge=bridge,
            conditioning=conditioning, input_mode=raw["input_mode"],
            unshuffle_factor=raw.get("unshuffle_factor", 1), schedule=schedule,
            external_components=tuple(raw.get("external_components", ())),
            keep_ratio_unet=raw.get("keep_ratio_unet", 1.0),
            keep_ratio_decoder=raw.get("keep_ratio_decoder", 1.0),
            schema_version=raw["schema_version"])
    except (KeyError, TypeError) as e:
        raise ConfigError(f"malformed config: {e}") from e
    validate(cfg)
    return cfg


def config_hash(cfg: ArchConfig) -> str:
    canonical = json.dumps(asdict(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()
