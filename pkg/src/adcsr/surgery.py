"""Structural compression transforms over (ArchConfig, WeightStore) pairs.

Four transforms, applied in a fixed order by apply_plan:
  1. eliminate_encoder  — drop the VAE encoder, switch the input to pixel
     unshuffling, widen the UNet input conv by channel tiling.
  2. remove_text_time   — drop cross-attention, the conditioning table, the
     time embedding and every residual block's time projection.
  3. optimize_connection — delete the UNet output projection and the decoder
     input conv; insert a single bridge conv between the two wide interfaces.
  4. prune_channels     — shrink every internal width to its keep_count and
     slice weights to the leading channel prefix, segment by segment.

Weight slicing is driven entirely by the per-parameter segment layouts of the
old and new configs (weight_layout), so concatenated inputs and gated layers
prune each constituent block independently without per-layer special cases.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from functools import reduce

import numpy as np

from .models.config import (
    INPUT_UNSHUFFLE,
    STUDENT,
    ArchConfig,
    BridgeSpec,
    ConfigError,
    check_student_structure,
    validate,
)
from .models.networks import weight_layout
from .models.store import WeightStore
from .seeding import generator


class SurgeryError(ValueError):
    pass


@dataclass(frozen=True)
class SurgeryPlan:
    eliminate_encoder: bool = True
    remove_text_time: bool = True
    optimize_connection: bool = True
    keep_unet: float = 0.75
    keep_dec: float = 0.5
    unshuffle_factor: int = 2
    # Off by default: divide tiled input-conv kernels by the repetition count.
    rescale_tiling: bool = False

    def __post_init__(self):
        for r in (self.keep_unet, self.keep_dec):
            if not (0.0 < r <= 1.0):
                raise SurgeryError(f"keep ratio {r} outside (0, 1]")
        if self.unshuffle_factor < 1:
            raise SurgeryError(f"unshuffle factor must be >= 1, got {self.unshuffle_factor}")


def plan_to_json(plan: SurgeryPlan) -> str:
    return json.dumps(asdict(plan), indent=2, sort_keys=True)


def plan_from_json(text: str) -> SurgeryPlan:
    try:
        return SurgeryPlan(**json.loads(text))
    except (json.JSONDecodeError, TypeError) as e:
        raise SurgeryError(f"malformed surgery plan: {e}") from e


def keep_count(c: int, ratio: float, head_dim: int | None = None) -> int:
    """Pruned width for a channel count: round(ratio*c) half-up, minimum 1;
    attention-bearing widths are floored to a head_dim multiple (0 rejects)."""
    if not (0.0 < ratio <= 1.0):
        raise SurgeryError(f"keep ratio {ratio} outside (0, 1]")
    k = max(int(math.floor(ratio * c + 0.5)), 1)
    if head_dim is not None:
        k = (k // head_dim) * head_dim
        if k == 0:
            raise SurgeryError(
                f"width {c} at ratio {ratio} cannot keep a multiple of head size {head_dim}")
    return min(k, c)


def _check_weights_match(ws: WeightStore, cfg: ArchConfig, where: str) -> None:
    expect = set(weight_layout(cfg))
    have = set(ws)
    if expect != have:
        missing = sorted(expect - have)[:6]
        extra = sorted(have - expect)[:6]
        raise SurgeryError(
            f"{where}: weights do not match config (missing={missing}, extra={extra})")


# ---------------------------------------------------------------------------
# 1. Encoder elimination


def eliminate_encoder(cfg: ArchConfig, ws: WeightStore, r: int,
                      rescale_tiling: bool = False) -> tuple[ArchConfig, WeightStore]:
    if not cfg.vae.encoder_present:
        raise SurgeryError("config has no encoder to eliminate")
    if r < 1:
        raise SurgeryError(f"unshuffle factor must be >= 1, got {r}")
    name = "unet.conv_in.weight"
    if name not in ws:
        raise SurgeryError("first UNet conv missing from weights")
    new_in = 3 * r * r
    old = ws[name]
    old_in = old.shape[1]
    reps = -(-new_in // old_in)  # ceil
    tiled = np.concatenate([old] * reps, axis=1)[:, :new_in]
    if rescale_tiling:
        tiled = tiled / reps
    out = WeightStore()
    for k, v in ws.items():
        if k.startswith("encoder."):
            continue
        out[k] = v
    out[name] = np.ascontiguousarray(tiled.astype(old.dtype))
    new_cfg = cfg.replace(
        input_mode=INPUT_UNSHUFFLE,
        unshuffle_factor=r,
        unet=_replace(cfg.unet, in_channels=new_in),
        vae=_replace(cfg.vae, encoder_present=False, encoder_channels=()),
    )
    validate(new_cfg)
    _check_weights_match(out, new_cfg, "eliminate_encoder")
    return new_cfg, out


def _replace(spec, **kw):
    from dataclasses import replace as dc_replace
    return dc_replace(spec, **kw)


# ---------------------------------------------------------------------------
# 2. Text/time removal


_REMOVED_MARKERS = (".attn2.", ".ln2.", ".time_proj.")
_REMOVED_PREFIXES = ("unet.time_embed.", "cond.")


def remove_text_time(cfg: ArchConfig, ws: WeightStore) -> tuple[ArchConfig, WeightStore]:
    out = WeightStore()
    for k, v in ws.items():
        if k.startswith(_REMOVED_PREFIXES) or any(m in k for m in _REMOVED_MARKERS):
            continue
        out[k] = v
    new_cfg = cfg.replace(
        unet=_replace(cfg.unet, cross_attention=False, time_embedding=False),
        conditioning=None,
        external_components=(),
    )
    validate(new_cfg)
    _check_weights_match(out, new_cfg, "remove_text_time")
    return new_cfg, out


# ---------------------------------------------------------------------------
# 3. Connection optimization


def optimize_connection(cfg: ArchConfig, ws: WeightStore) -> tuple[ArchConfig, WeightStore]:
    if cfg.bridge.enabled:
        raise SurgeryError("config is already bridged")
    if not (cfg.unet.final_projection and cfg.vae.decoder_input_conv):
        raise SurgeryError("boundary layers unavailable for connection optimization")
    c_in = cfg.unet.top_width
    c_out = cfg.vae.decoder_mid_width
    u_name, d_name = "unet.conv_out.weight", "decoder.conv_in.weight"
    out = WeightStore()
    dropped = ("unet.norm_out.", "unet.conv_out.", "decoder.conv_in.")
    for k, v in ws.items():
        if k.startswith(dropped):
            continue
        out[k] = v
    if u_name in ws and d_name in ws:
        # Warm start: collapse the two deleted 3x3 convs through the latent
        # bottleneck, taking the UNet conv at its center tap so the composite
        # stays 3x3. bias = dec_bias + dec_kernel applied to the constant
        # field produced by the UNet conv bias.
        u_w = ws[u_name].astype(np.float64)            # (lat, c_in, 3, 3)
        d_w = ws[d_name].astype(np.float64)            # (c_out, lat, 3, 3)
        u_center = u_w[:, :, u_w.shape[2] // 2, u_w.shape[3] // 2]
        weight = np.einsum("omyx,mi->oiyx", d_w, u_center)
        bias = np.zeros(c_out, dtype=np.float64)
        if d_name.replace("weight", "bias") in ws:
            bias += ws["decoder.conv_in.bias"].astype(np.float64)
        if "unet.conv_out.bias" in ws:
            bias += np.einsum("omyx,m->o", d_w, ws["unet.conv_out.bias"].astype(np.float64))
    else:
        rng = generator(0, "surgery", "bridge-init")
        weight = rng.normal(0.0, 0.02, size=(c_out, c_in, 3, 3))
        bias = np.zeros(c_out, dtype=np.float64)
    out["bridge.weight"] = np.ascontiguousarray(weight.astype(np.float32))
    out["bridge.bias"] = np.ascontiguousarray(bias.astype(np.float32))
    new_cfg = cfg.replace(
        unet=_replace(cfg.unet, final_projection=False, out_channels=c_in),
        vae=_replace(cfg.vae, decoder_input_conv=False),
        bridge=BridgeSpec(enabled=True, in_channels=c_in, out_channels=c_out, kernel=3),
    )
    validate(new_cfg)
    _check_weights_match(out, new_cfg, "optimize_connection")
    return new_cfg, out


# ---------------------------------------------------------------------------
# 4. Channel pruning


def _gcd_all(values) -> int:
    return reduce(math.gcd, values)


def pruned_unet_channels(cfg: ArchConfig, ratio: float) -> tuple[int, ...]:
    u = cfg.unet
    out = []
    for i, c in enumerate(u.channels):
        attn = u.self_attention[i] or (i == 0 and u.mid_attention)
        out.append(keep_count(c, ratio, u.head_dim if attn else None))
    return tuple(out)


def pruned_config(cfg: ArchConfig, keep_unet: float, keep_dec: float) -> ArchConfig:
    """Config half of prune_channels: new widths, adjusted norm group counts."""
    u, v = cfg.unet, cfg.vae
    new_uc = pruned_unet_channels(cfg, keep_unet)
    new_dc = tuple(keep_count(c, keep_dec) for c in v.decoder_channels)
    new_ug = math.gcd(u.norm_groups, _gcd_all(new_uc))
    new_dg = math.gcd(v.decoder_norm_groups, _gcd_all(new_dc))
    new_u = _replace(u, channels=new_uc, norm_groups=new_ug)
    if not u.final_projection:
        new_u = _replace(new_u, out_channels=new_uc[-1])
    new_v = _replace(v, decoder_channels=new_dc, decoder_norm_groups=new_dg)
    bridge = cfg.bridge
    if bridge.enabled:
        bridge = BridgeSpec(enabled=True, in_channels=new_uc[-1],
                            out_channels=new_dc[0], kernel=bridge.kernel)
    new_cfg = cfg.replace(
        unet=new_u, vae=new_v, bridge=bridge,
        keep_ratio_unet=cfg.keep_ratio_unet * keep_unet,
        keep_ratio_decoder=cfg.keep_ratio_decoder * keep_dec,
    )
    validate(new_cfg)
    return new_cfg


def _slice_axis(arr: np.ndarray, old_segs: tuple[int, ...],
                new_segs: tuple[int, ...], axis: int, name: str) -> np.ndarray:
    if old_segs == new_segs:
        return arr
    if len(old_segs) != len(new_segs) or sum(old_segs) != arr.shape[axis]:
        raise SurgeryError(f"segment mismatch on {name} axis {axis}: "
                           f"{old_segs} -> {new_segs} for shape {arr.shape}")
    pieces = []
    offset = 0
    for o, n in zip(old_segs, new_segs):
        if n > o:
            raise SurgeryError(f"segment grows on {name}: {o} -> {n}")
        index = [slice(None)] * arr.ndim
        index[axis] = slice(offset, offset + n)
        pieces.append(arr[tuple(index)])
        offset += o
    return np.concatenate(pieces, axis=axis)


def prune_channels(cfg: ArchConfig, ws: WeightStore, keep_unet: float,
                   keep_dec: float) -> tuple[ArchConfig, WeightStore]:
    new_cfg = pruned_config(cfg, keep_unet, keep_dec)
    old_layout = weight_layout(cfg)
    new_layout = weight_layout(new_cfg)
    if set(old_layout) != set(new_layout):
        raise SurgeryError("pruning changed the parameter name set; widths only expected")
    _check_weights_match(ws, cfg, "prune_channels input")
    out = WeightStore()
    for name in ws:
        arr = ws[name]
        old_info, new_info = old_layout[name], new_layout[name]
        arr = _slice_axis(arr, old_info.out_segments, new_info.out_segments, 0, name)
        if old_info.in_segments and arr.ndim > 1:
            arr = _slice_axis(arr, old_info.in_segments, new_info.in_segments, 1, name)
        if tuple(arr.shape) != new_info.shape:
            raise SurgeryError(
                f"pruned {name} to {tuple(arr.shape)}, layout expects {new_info.shape}")
        out[name] = np.ascontiguousarray(arr)
    return new_cfg, out


# ---------------------------------------------------------------------------
# Full plan


def student_config(cfg: ArchConfig, plan: SurgeryPlan) -> ArchConfig:
    """Config-only version of apply_plan, for static cost accounting."""
    out = cfg
    if plan.eliminate_encoder:
        out = out.replace(
            input_mode=INPUT_UNSHUFFLE, unshuffle_factor=plan.unshuffle_factor,
            unet=_replace(out.unet, in_channels=3 * plan.unshuffle_factor ** 2),
            vae=_replace(out.vae, encoder_present=False, encoder_channels=()))
    if plan.remove_text_time:
        out = out.replace(unet=_replace(out.unet, cross_attention=False,
                                        time_embedding=False),
                          conditioning=None, external_components=())
    if plan.optimize_connection:
        if out.bridge.enabled:
            raise SurgeryError("config is already bridged")
        out = out.replace(
            unet=_replace(out.unet, final_projection=False,
                          out_channels=out.unet.top_width),
            vae=_replace(out.vae, decoder_input_conv=False),
            bridge=BridgeSpec(enabled=True, in_channels=out.unet.top_width,
                              out_channels=out.vae.decoder_mid_width, kernel=3))
    out = pruned_config(out, plan.keep_unet, plan.keep_dec)
    out = out.replace(role=STUDENT)
    validate(out)
    if plan.eliminate_encoder and plan.remove_text_time and plan.optimize_connection:
        check_student_structure(out)
    return out


def apply_plan(cfg: ArchConfig, ws: WeightStore,
               plan: SurgeryPlan) -> tuple[ArchConfig, WeightStore]:
    """Transforms in fixed order: eliminate -> remove -> connect -> prune."""
    cur_cfg, cur_ws = cfg, ws
    if plan.eliminate_encoder:
        cur_cfg, cur_ws = eliminate_encoder(cur_cfg, cur_ws, plan.unshuffle_factor,
                                            rescale_tiling=plan.rescale_tiling)
    if plan.remove_text_time:
        cur_cfg, cur_ws = remove_text_time(cur_cfg, cur_ws)
    if plan.optimize_connection:
        cur_cfg, cur_ws = optimize_connection(cur_cfg, cur_ws)
    cur_cfg, cur_ws = prune_channels(cur_cfg, cur_ws, plan.keep_unet, plan.keep_dec)
    cur_cfg = cur_cfg.replace(role=STUDENT)
    validate(cur_cfg)
    if plan.eliminate_encoder and plan.remove_text_time and plan.optimize_connection:
        try:
            check_student_structure(cur_cfg)
        except ConfigError as e:
            raise SurgeryError(f"full plan left a non-student structure: {e}") from e
    _check_weights_match(cur_ws, cur_cfg, "apply_plan result")
    return cur_cfg, cur_ws
