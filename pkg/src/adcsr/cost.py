"""Static parameter and MAC accounting over architecture configs.

Counts come from a closed-form enumeration of the architecture arithmetic,
written against the config alone — deliberately independent of the network
builder so the two can cross-check each other exactly.

Conventions (documented in every report footer):
  - MACs count multiplies only: conv C_out*C_in*k^2*H_out*W_out, linear
    d_out*d_in*positions, attention 4*C^2*L + 2*L^2*C (plus the context
    projections and score/mix terms for cross-attention).
  - Normalization, activations, resampling, elementwise ops, and bias adds
    contribute zero MACs.
  - MACs are per sample for one LR -> SR pass at the stated input size.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .models.config import (
    INPUT_ENCODER,
    INPUT_UNSHUFFLE,
    ArchConfig,
    UNetSpec,
    VAESpec,
    validate,
)
from . import SCALE_FACTOR

MODULES = ("unet", "encoder", "decoder", "bridge", "conditioning")


class CostError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Op enumeration: each op is (module, kind, payload...) and knows its own
# parameter and multiply counts.


@dataclass(frozen=True)
class _Op:
    module: str
    kind: str        # conv | lin | norm | sa | ca | emb
    a: int = 0       # conv: c_in   lin: d_in   norm: c  sa/ca: width  emb: tokens
    b: int = 0       # conv: c_out  lin: d_out            ca: ctx width  emb: width
    k: int = 1       # conv kernel
    pos: int = 0     # conv/lin/sa: output positions L    ca: query positions
    t: int = 0       # ca: context length
    bias: bool = True

    def params(self) -> int:
        if self.kind == "conv":
            return self.b * self.a * self.k * self.k + (self.b if self.bias else 0)
        if self.kind == "lin":
            return self.b * self.a + (self.b if self.bias else 0)
        if self.kind == "norm":
            return 2 * self.a
        if self.kind == "sa":
            c = self.a
            return 4 * c * c + c            # q,k,v bias-free; out has bias
        if self.kind == "ca":
            c, ctx = self.a, self.b
            return 2 * c * c + 2 * c * ctx + c
        if self.kind == "emb":
            return self.a * self.b
        raise CostError(f"unknown op kind {self.kind}")

    def macs(self) -> int:
        if self.kind == "conv":
            return self.b * self.a * self.k * self.k * self.pos
        if self.kind == "lin":
            return self.b * self.a * self.pos
        if self.kind == "norm" or self.kind == "emb":
            return 0
        if self.kind == "sa":
            c, L = self.a, self.pos
            return 4 * c * c * L + 2 * L * L * c
        if self.kind == "ca":
            c, ctx, L, T = self.a, self.b, self.pos, self.t
            return 2 * c * c * L + 2 * ctx * c * T + 2 * L * T * c
        raise CostError(f"unknown op kind {self.kind}")


def _resblock(module: str, c_in: int, c_out: int, hw: int,
              tdim: int | None, force_skip: bool = False):
    yield _Op(module, "norm", a=c_in)
    yield _Op(module, "conv", a=c_in, b=c_out, k=3, pos=hw)
    if tdim is not None:
        yield _Op(module, "lin", a=tdim, b=c_out, pos=1, bias=False)
    yield _Op(module, "norm", a=c_out)
    yield _Op(module, "conv", a=c_out, b=c_out, k=3, pos=hw)
    if c_in != c_out or force_skip:
        yield _Op(module, "conv", a=c_in, b=c_out, k=1, pos=hw)


def _transformer(module: str, c: int, hw: int, ctx: int | None, tokens: int):
    yield _Op(module, "norm", a=c)
    yield _Op(module, "conv", a=c, b=c, k=1, pos=hw)
    yield _Op(module, "norm", a=c)                      # ln1
    yield _Op(module, "sa", a=c, pos=hw)
    if ctx is not None:
        yield _Op(module, "norm", a=c)                  # ln2
        yield _Op(module, "ca", a=c, b=ctx, pos=hw, t=tokens)
    yield _Op(module, "norm", a=c)                      # ln3
    yield _Op(module, "lin", a=c, b=8 * c, pos=hw)      # gated expansion
    yield _Op(module, "lin", a=4 * c, b=c, pos=hw)
    yield _Op(module, "conv", a=c, b=c, k=1, pos=hw)


def _vae_attn_ops(module: str, c: int, hw: int):
    # Single-head attention with 1x1 conv projections: projections above plus
    # the two L x L matmuls; expressed directly to keep the formula readable.
    yield _Op(module, "norm", a=c)
    for _ in range(4):
        yield _Op(module, "conv", a=c, b=c, k=1, pos=hw)
    yield _Op(module, "_bmm2", a=c, pos=hw)


def _unet_ops(u: UNetSpec, ctx_width: int | None, tokens: int, h: int, w: int):
    widths = u.channels[::-1]
    attn = u.self_attention[::-1]
    tdim = u.time_dim if u.time_embedding else None
    cw = ctx_width if u.cross_attention else None
    sizes = [(h >> i, w >> i) for i in range(len(widths))]

    yield _Op("unet", "conv", a=u.in_channels, b=widths[0], k=3, pos=h * w)
    if tdim is not None:
        yield _Op("unet", "lin", a=u.top_width, b=tdim, pos=1)
        yield _Op("unet", "lin", a=tdim, b=tdim, pos=1)

    skip_widths = [widths[0]]
    for i, wd in enumerate(widths):
        hw = sizes[i][0] * sizes[i][1]
        c_prev = widths[i - 1] if i > 0 else widths[0]
        for j in range(u.blocks_per_level):
            yield from _resblock("unet", c_prev if j == 0 else wd, wd, hw, tdim)
            if attn[i]:
                yield from _transformer("unet", wd, hw, cw, tokens)
            skip_widths.append(wd)
        if i < len(widths) - 1:
            hw_out = sizes[i + 1][0] * sizes[i + 1][1]
            yield _Op("unet", "conv", a=wd, b=wd, k=3, pos=hw_out)
            skip_widths.append(wd)

    bw = widths[-1]
    hw = sizes[-1][0] * sizes[-1][1]
    yield from _resblock("unet", bw, bw, hw, tdim)
    if u.mid_attention:
        yield from _transformer("unet", bw, hw, cw, tokens)
    yield from _resblock("unet", bw, bw, hw, tdim)

    cur = bw
    for i in reversed(range(len(widths))):
        wd = widths[i]
        hw = sizes[i][0] * sizes[i][1]
        for _ in range(u.blocks_per_level + 1):
            sk = skip_widths.pop()
            yield from _resblock("unet", cur + sk, wd, hw, tdim, force_skip=True)
            if attn[i]:
                yield from _transformer("unet", wd, hw, cw, tokens)
            cur = wd
        if i > 0:
            hw_up = sizes[i - 1][0] * sizes[i - 1][1]
            yield _Op("unet", "conv", a=wd, b=wd, k=3, pos=hw_up)
    assert not skip_widths

    if u.final_projection:
        yield _Op("unet", "norm", a=widths[0])
        yield _Op("unet", "conv", a=widths[0], b=u.out_channels, k=3, pos=h * w)


def _encoder_ops(v: VAESpec, h: int, w: int):
    widths = v.encoder_channels[::-1]
    sizes = [(h >> i, w >> i) for i in range(len(widths))]
    yield _Op("encoder", "conv", a=3, b=widths[0], k=3, pos=h * w)
    for i, wd in enumerate(widths):
        hw = sizes[i][0] * sizes[i][1]
        c_prev = widths[i - 1] if i > 0 else widths[0]
        for j in range(v.encoder_blocks):
            yield from _resblock("encoder", c_prev if j == 0 else wd, wd, hw, None)
        if i < len(widths) - 1:
            hw_out = sizes[i + 1][0] * sizes[i + 1][1]
            yield _Op("encoder", "conv", a=wd, b=wd, k=3, pos=hw_out)
    bw = widths[-1]
    hw = sizes[-1][0] * sizes[-1][1]
    yield from _resblock("encoder", bw, bw, hw, None)
    if v.encoder_mid_attention:
        yield from _vae_attn_ops("encoder", bw, hw)
    yield from _resblock("encoder", bw, bw, hw, None)
    yield _Op("encoder", "norm", a=bw)
    yield _Op("encoder", "conv", a=bw, b=2 * v.latent_channels, k=3, pos=hw)


def _decoder_ops(v: VAESpec, h: int, w: int):
    widths = v.decoder_channels
    mw = widths[0]
    hw = h * w
    if v.decoder_input_conv:
        yield _Op("decoder", "conv", a=v.latent_channels, b=mw, k=3, pos=hw)
    yield from _resblock("decoder", mw, mw, hw, None)
    if v.decoder_mid_attention:
        yield from _vae_attn_ops("decoder", mw, hw)
    yield from _resblock("decoder", mw, mw, hw, None)
    ch, cw_ = h, w
    for i, wd in enumerate(widths):
        hw = ch * cw_
        c_prev = widths[i - 1] if i > 0 else mw
        for j in range(v.decoder_blocks):
            yield from _resblock("decoder", c_prev if j == 0 else wd, wd, hw, None)
        if i < len(widths) - 1:
            ch, cw_ = ch * 2, cw_ * 2
            yield _Op("decoder", "conv", a=wd, b=wd, k=3, pos=ch * cw_)
    yield _Op("decoder", "norm", a=widths[-1])
    yield _Op("decoder", "conv", a=widths[-1], b=3, k=3, pos=ch * cw_)


def _check_divisible(value: int, divisor: int, what: str) -> None:
    if value % divisor:
        raise CostError(f"{what} {value} not divisible by {divisor}")


def _enumerate(cfg: ArchConfig, input_hw: tuple[int, int] | None) -> list[_Op]:
    """All counted layers for one SR pass at LR size input_hw. input_hw=None
    enumerates with dummy spatial sizes: parameter counts stay exact, MAC
    fields are meaningless and divisibility is not checked."""
    validate(cfg)
    u, v = cfg.unet, cfg.vae
    checked = input_hw is not None
    lr_h, lr_w = input_hw if checked else (256, 256)
    tokens = cfg.conditioning.tokens if cfg.conditioning else 0
    ctx_w = cfg.conditioning.width if cfg.conditioning else None

    ops: list[_Op] = []
    if cfg.input_mode == INPUT_ENCODER:
        hr_h, hr_w = lr_h * SCALE_FACTOR, lr_w * SCALE_FACTOR
        f = v.downsample_factor
        if checked:
            _check_divisible(hr_h, f, "upscaled height")
            _check_divisible(hr_w, f, "upscaled width")
        lat_h, lat_w = hr_h // f, hr_w // f
        ops.extend(_encoder_ops(v, hr_h, hr_w))
    else:
        r = cfg.unshuffle_factor
        if checked:
            _check_divisible(lr_h, r, "LR height")
            _check_divisible(lr_w, r, "LR width")
        lat_h, lat_w = lr_h // r, lr_w // r

    if checked:
        down = 1 << (u.levels - 1)
        _check_divisible(lat_h, down, "UNet input height")
        _check_divisible(lat_w, down, "UNet input width")

    ops.extend(_unet_ops(u, ctx_w, tokens, lat_h, lat_w))

    if cfg.bridge.enabled:
        ops.append(_Op("bridge", "conv", a=cfg.bridge.in_channels,
                       b=cfg.bridge.out_channels, k=cfg.bridge.kernel,
                       pos=lat_h * lat_w))
    if cfg.conditioning is not None and cfg.conditioning.kind == "embedding":
        ops.append(_Op("conditioning", "emb", a=cfg.conditioning.tokens,
                       b=cfg.conditioning.width))

    ops.extend(_decoder_ops(v, lat_h, lat_w))
    return ops


def _tally(ops: list[_Op], macs: bool) -> dict[str, int]:
    out = {m: 0 for m in MODULES}
    for op in ops:
        if op.kind == "_bmm2":
            out[op.module] += 2 * op.pos * op.pos * op.a if macs else 0
        else:
            out[op.module] += op.macs() if macs else op.params()
    return {m: n for m, n in out.items() if n or _module_present(m, ops)}


def _module_present(module: str, ops: list[_Op]) -> bool:
    return any(op.module == module for op in ops)


def count_params(cfg: ArchConfig) -> dict[str, int]:
    """Per-module parameter counts plus 'total'; exact versus enumeration."""
    per = _tally(_enumerate(cfg, None), macs=False)
    per["total"] = sum(per.values())
    return per


def count_macs(cfg: ArchConfig, input_hw: tuple[int, int]) -> dict[str, int]:
    """Per-module multiply counts plus 'total' for one LR->SR pass."""
    if len(input_hw) != 2 or input_hw[0] < 1 or input_hw[1] < 1:
        raise CostError(f"bad input size {input_hw}")
    per = _tally(_enumerate(cfg, tuple(input_hw)), macs=True)
    per["total"] = sum(per.values())
    return per


# ---------------------------------------------------------------------------
# Aux sizes for externally modeled teacher components


@dataclass(frozen=True)
class AuxSize:
    params: int
    macs: int
    note: str = ""


def load_aux_sizes(path: str | Path) -> dict[str, AuxSize]:
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise CostError(f"cannot read aux sizes {path}: {e}") from e
    out = {}
    for name, entry in raw.items():
        if name.startswith("_"):
            continue
        try:
            out[name] = AuxSize(params=int(entry["params"]), macs=int(entry["macs"]),
                                note=str(entry.get("note", "")))
        except (KeyError, TypeError, ValueError) as e:
            raise CostError(f"malformed aux entry {name!r}: {e}") from e
        if out[name].params < 0 or out[name].macs < 0:
            raise CostError(f"aux entry {name!r} has negative sizes")
    return out


def default_aux_path() -> Path:
    return Path(__file__).parent / "data" / "sd21_aux.json"


# ---------------------------------------------------------------------------
# Comparison report


FOOTER = (
    "MACs are multiplies for one LR->SR pass per sample at the stated input size.\n"
    "Normalization, activations, resampling, elementwise ops and bias adds count 0.\n"
    "External components enter via the documented aux size table, not structurally."
)


@dataclass(frozen=True)
class CostReport:
    input_hw: tuple[int, int]
    teacher_rows: tuple[tuple[str, int, int], ...]   # (module, params, macs)
    student_rows: tuple[tuple[str, int, int], ...]
    teacher_totals: tuple[int, int]
    student_totals: tuple[int, int]

    @property
    def param_ratio(self) -> float:
        return self.student_totals[0] / self.teacher_totals[0]

    @property
    def mac_ratio(self) -> float:
        return self.student_totals[1] / self.teacher_totals[1]

    @property
    def param_reduction(self) -> float:
        return 1.0 - self.param_ratio

    @property
    def mac_reduction(self) -> float:
        return 1.0 - self.mac_ratio

    def render_table(self) -> str:
        rows = []
        for model, rs, totals in (("teacher", self.teacher_rows, self.teacher_totals),
                                  ("student", self.student_rows, self.student_totals)):
            for mod, p, m in rs:
                rows.append((model, mod, p, m))
            rows.append((model, "TOTAL", totals[0], totals[1]))
        head = ("model", "module", "params", "params(M)", "macs", "macs(G)")
        body = [(a, b, f"{p:,}", f"{p / 1e6:.1f}", f"{m:,}", f"{m / 1e9:.2f}")
                for a, b, p, m in rows]
        widths = [max(len(h), *(len(r[i]) for r in body)) for i, h in enumerate(head)]
        def line(cells):
            return "  ".join(c.ljust(w) for c, w in zip(cells, widths)).rstrip()
        sep = "-" * (sum(widths) + 2 * (len(widths) - 1))
        out = [line(head), sep]
        out += [line(r) for r in body]
        out.append(sep)
        out.append(f"input: {self.input_hw[0]}x{self.input_hw[1]} LR  "
                   f"param ratio {self.param_ratio:.4f} (reduction {100 * self.param_reduction:.1f}%)  "
                   f"mac ratio {self.mac_ratio:.4f} (reduction {100 * self.mac_reduction:.1f}%)")
        out.append("")
        out.append(FOOTER)
        return "\n".join(out)

    def render_keyvalues(self) -> str:
        kv = {}
        for model, rs, totals in (("teacher", self.teacher_rows, self.teacher_totals),
                                  ("student", self.student_rows, self.student_totals)):
            for mod, p, m in rs:
                kv[f"{model}.{mod}.params"] = p
                kv[f"{model}.{mod}.macs"] = m
            kv[f"{model}.total.params"] = totals[0]
            kv[f"{model}.total.macs"] = totals[1]
        kv["input.h"], kv["input.w"] = self.input_hw
        kv["ratio.params"] = f"{self.param_ratio:.6f}"
        kv["ratio.macs"] = f"{self.mac_ratio:.6f}"
        kv["reduction.params"] = f"{self.param_reduction:.6f}"
        kv["reduction.macs"] = f"{self.mac_reduction:.6f}"
        return "\n".join(f"{k} = {kv[k]}" for k in sorted(kv)) + "\n"

    def save_plot(self, path: str | Path) -> None:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        fig, ax = plt.subplots(figsize=(6, 4.5))
        pts = [("teacher", self.teacher_totals, "#888888"),
               ("student", self.student_totals, "#d62728")]
        for name, (p, m), color in pts:
            ax.scatter(p / 1e6, m / 1e9, s=max(p / 1e6, 1.0) * 2.0,
                       color=color, alpha=0.6, edgecolors="black", zorder=3)
            ax.annotate(f"{name}\n{p / 1e6:.0f}M / {m / 1e9:.0f}G",
                        (p / 1e6, m / 1e9), textcoords="offset points",
                        xytext=(10, 8), fontsize=9)
        ax.set_xlabel("parameters (M)")
        ax.set_ylabel("MACs (G)")
        ax.set_title("teacher vs student cost")
        ax.grid(True, linewidth=0.3, alpha=0.5)
        fig.tight_layout()
        fig.savefig(path, dpi=120)
        plt.close(fig)


def _rows_for(cfg: ArchConfig, input_hw, aux: dict[str, AuxSize] | None):
    params = count_params(cfg)
    macs = count_macs(cfg, input_hw)
    rows = []
    for mod in MODULES:
        if mod in params or mod in macs:
            rows.append((mod, params.get(mod, 0), macs.get(mod, 0)))
    total_p, total_m = params["total"], macs["total"]
    for comp in cfg.external_components:
        if aux is None or comp not in aux:
            raise CostError(
                f"config declares external component {comp!r} but no aux size was given")
        rows.append((f"aux:{comp}", aux[comp].params, aux[comp].macs))
        total_p += aux[comp].params
        total_m += aux[comp].macs
    return tuple(rows), (total_p, total_m)


def compare(teacher_cfg: ArchConfig, aux_sizes: dict[str, AuxSize] | None,
            student_cfg: ArchConfig, input_hw: tuple[int, int]) -> CostReport:
    """Teacher-vs-student cost report at an LR input size."""
    t_rows, t_tot = _rows_for(teacher_cfg, input_hw, aux_sizes)
    s_rows, s_tot = _rows_for(student_cfg, input_hw, aux_sizes)
    return CostReport(input_hw=tuple(input_hw), teacher_rows=t_rows,
                      student_rows=s_rows, teacher_totals=t_tot,
                      student_totals=s_tot)


# ---------------------------------------------------------------------------
# Runtime multiply measurement (oracle side of the exactness checks)


def measure_macs(fn, *args) -> int:
    """Multiplies actually executed by fn(*args), via the dispatch-level flop
    counter (flops = 2 x MACs for every counted op)."""
    from torch.utils.flop_counter import FlopCounterMode

    counter = FlopCounterMode(display=False)
    with counter:
        fn(*args)
    total = counter.get_total_flops()
    if total % 2:
        raise CostError(f"odd flop total {total}; cannot halve to MACs")
    return total // 2
