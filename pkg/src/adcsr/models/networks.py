"""Network construction: UNet, VAE encoder/decoder, bridge, conditioning stub.

Layer modules carry segment annotations (`_seg_out`, `_seg_in`): tuples of
channel-block sizes along the output/input axes. Concatenated inputs (UNet
skip connections, GEGLU gates) have more than one segment; channel pruning
slices a prefix of every segment independently, so the annotations are the
contract between this builder and the surgery module.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import ArchConfig, UNetSpec, VAESpec, validate
from .schedule import NoiseSchedule, make_alpha_bar
from .store import WeightStore


class BuildError(ValueError):
    pass


def _mark(m: nn.Module, out_segs: tuple[int, ...], in_segs: tuple[int, ...] = ()) -> nn.Module:
    m._seg_out = tuple(out_segs)
    m._seg_in = tuple(in_segs)
    return m


def _conv(c_in: int, c_out: int, k: int = 3, stride: int = 1,
          in_segs=None, out_segs=None) -> nn.Conv2d:
    m = nn.Conv2d(c_in, c_out, k, stride=stride, padding=k // 2)
    return _mark(m, out_segs or (c_out,), in_segs or (c_in,))


def _linear(d_in: int, d_out: int, bias: bool = True,
            in_segs=None, out_segs=None) -> nn.Linear:
    m = nn.Linear(d_in, d_out, bias=bias)
    return _mark(m, out_segs or (d_out,), in_segs or (d_in,))


def _gn(groups: int, c: int, segs=None) -> nn.GroupNorm:
    return _mark(nn.GroupNorm(groups, c), segs or (c,))


def _ln(c: int) -> nn.LayerNorm:
    return _mark(nn.LayerNorm(c), (c,))


def sinusoidal_embedding(t: torch.Tensor, dim: int) -> torch.Tensor:
    """Standard sin/cos timestep features, shape (B, dim); dim must be even."""
    if dim % 2:
        raise BuildError(f"sinusoidal dim must be even, got {dim}")
    half = dim // 2
    freqs = torch.exp(
        -math.log(10000.0) * torch.arange(half, dtype=torch.float64) / half
    ).to(device=t.device)
    ang = t.to(torch.float64)[:, None] * freqs[None, :]
    return torch.cat([torch.sin(ang), torch.cos(ang)], dim=1)


class TimeEmbedding(nn.Module):
    def __init__(self, sin_dim: int, hidden: int):
        super().__init__()
        self.sin_dim = sin_dim
        self.lin1 = _linear(sin_dim, hidden)
        self.lin2 = _linear(hidden, hidden)

    def forward(self, t: torch.Tensor) -> torch.Tensor:
        dtype = self.lin1.weight.dtype
        emb = sinusoidal_embedding(t, self.sin_dim).to(dtype)
        return self.lin2(F.silu(self.lin1(emb)))


class Attention(nn.Module):
    """Multi-head attention over (B, L, C) sequences; manual matmuls."""

    def __init__(self, c: int, head_dim: int, ctx_width: int | None = None):
        super().__init__()
        if c % head_dim:
            raise BuildError(f"width {c} not divisible by head_dim {head_dim}")
        self.heads = c // head_dim
        self.head_dim = head_dim
        src = ctx_width if ctx_width is not None else c
        self.to_q = _linear(c, c, bias=False)
        self.to_k = _linear(src, c, bias=False)
        self.to_v = _linear(src, c, bias=False)
        self.to_out = _linear(c, c)

    def _split(self, x: torch.Tensor) -> torch.Tensor:
        b, l, _ = x.shape
        return x.reshape(b, l, self.heads, self.head_dim).permute(0, 2, 1, 3)

    def forward(self, x: torch.Tensor, ctx: torch.Tensor | None = None) -> torch.Tensor:
        src = x if ctx is None else ctx
        q = self._split(self.to_q(x))
        k = self._split(self.to_k(src))
        v = self._split(self.to_v(src))
        att = torch.matmul(q * (self.head_dim ** -0.5), k.transpose(-1, -2))
        att = att.softmax(dim=-1)
        y = torch.matmul(att, v)
        b, h, l, d = y.shape
        return self.to_out(y.permute(0, 2, 1, 3).reshape(b, l, h * d))


class GEGLU(nn.Module):
    """Gated feed-forward: Linear(c -> 8c) split in half, GELU gate, Linear(4c -> c)."""

    def __init__(self, c: int):
        super().__init__()
        inner = 4 * c
        self.lin1 = _linear(c, 2 * inner, out_segs=(inner, inner))
        self.lin2 = _linear(inner, c)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        val, gate = self.lin1(x).chunk(2, dim=-1)
        return self.lin2(val * F.gelu(gate))


class TransformerBlock(nn.Module):
    """GN + proj_in, self-attention, optional cross-attention, GEGLU FF, proj_out."""

    def __init__(self, c: int, head_dim: int, groups: int, ctx_width: int | None):
        super().__init__()
        self.norm = _gn(groups, c)
        self.proj_in = _conv(c, c, 1)
        self.ln1 = _ln(c)
        self.attn1 = Attention(c, head_dim)
        self.has_cross = ctx_width is not None
        if self.has_cross:
            self.ln2 = _ln(c)
            self.attn2 = Attention(c, head_dim, ctx_width=ctx_width)
        self.ln3 = _ln(c)
        self.ff = GEGLU(c)
        self.proj_out = _conv(c, c, 1)

    def forward(self, x: torch.Tensor, ctx: torch.Tensor | None = None) -> torch.Tensor:
        b, c, h, w = x.shape
        res = x
        y = self.proj_in(self.norm(x))
        seq = y.permute(0, 2, 3, 1).reshape(b, h * w, c)
        seq = seq + self.attn1(self.ln1(seq))
        if self.has_cross and ctx is not None:
            seq = seq + self.attn2(self.ln2(seq), ctx)
        seq = seq + self.ff(self.ln3(seq))
        y = seq.reshape(b, h, w, c).permute(0, 3, 1, 2)
        return self.proj_out(y) + res


class VAEAttention(nn.Module):
    """Single-head attention block used in VAE mid sections (1x1 conv projections)."""

    def __init__(self, c: int, groups: int):
        super().__init__()
        self.norm = _gn(groups, c)
        self.q = _conv(c, c, 1)
        self.k = _conv(c, c, 1)
        self.v = _conv(c, c, 1)
        self.proj_out = _conv(c, c, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, c, h, w = x.shape
        y = self.norm(x)
        q = self.q(y).reshape(b, c, h * w).permute(0, 2, 1)
        k = self.k(y).reshape(b, c, h * w)
        v = self.v(y).reshape(b, c, h * w).permute(0, 2, 1)
        att = torch.bmm(q * (c ** -0.5), k).softmax(dim=-1)
        y = torch.bmm(att, v).permute(0, 2, 1).reshape(b, c, h, w)
        return self.proj_out(y) + x


class ResBlock(nn.Module):
    """GN/SiLU/conv x2 with optional additive time projection and 1x1 skip.

    The time projection is bias-free so a zero embedding contributes exactly
    nothing; in_segs carries concatenation structure for pruning.
    """

    def __init__(self, c_in: int, c_out: int, groups: int,
                 time_dim: int | None = None, in_segs: tuple[int, ...] | None = None):
        super().__init__()
        in_segs = in_segs or (c_in,)
        self.norm1 = _gn(groups, c_in, segs=in_segs)
        self.conv1 = _conv(c_in, c_out, 3, in_segs=in_segs)
        self.time_proj = None
        if time_dim is not None:
            self.time_proj = _linear(time_dim, c_out, bias=False)
        self.norm2 = _gn(groups, c_out)
        self.conv2 = _conv(c_out, c_out, 3)
        self.skip = None
        if c_in != c_out or len(in_segs) > 1:
            self.skip = _conv(c_in, c_out, 1, in_segs=in_segs)

    def forward(self, x: torch.Tensor, temb: torch.Tensor | None = None) -> torch.Tensor:
        h = self.conv1(F.silu(self.norm1(x)))
        if self.time_proj is not None and temb is not None:
            h = h + self.time_proj(F.silu(temb))[:, :, None, None]
        h = self.conv2(F.silu(self.norm2(h)))
        return h + (self.skip(x) if self.skip is not None else x)


class Downsample(nn.Module):
    def __init__(self, c: int):
        super().__init__()
        self.conv = _conv(c, c, 3, stride=2)

    def forward(self, x):
        return self.conv(x)


class Upsample(nn.Module):
    def __init__(self, c: int):
        super().__init__()
        self.conv = _conv(c, c, 3)

    def forward(self, x):
        return self.conv(F.interpolate(x, scale_factor=2.0, mode="nearest"))


class ConditioningStub(nn.Module):
    """Fixed learned token table standing in for an external text pipeline."""

    def __init__(self, tokens: int, width: int):
        super().__init__()
        self.table = _mark(nn.Embedding(tokens, width), (tokens,), (width,))

    def forward(self, batch: int) -> torch.Tensor:
        return self.table.weight.unsqueeze(0).expand(batch, -1, -1)


class UNetModel(nn.Module):
    """Diffusion UNet; config channel lists run smallest spatial level first."""

    def __init__(self, spec: UNetSpec, ctx_width: int | None):
        super().__init__()
        if spec.cross_attention and ctx_width is None:
            raise BuildError("cross-attention UNet needs a conditioning width")
        self.spec = spec
        widths = spec.channels[::-1]            # top-down walk order
        attn = spec.self_attention[::-1]
        groups = spec.norm_groups
        tdim = spec.time_dim if spec.time_embedding else None
        cw = ctx_width if spec.cross_attention else None

        self.conv_in = _conv(spec.in_channels, widths[0], 3,
                             in_segs=(spec.in_channels,))
        self.time_embed = TimeEmbedding(spec.top_width, tdim) if tdim else None

        skip_widths = [widths[0]]
        down = []
        for i, w in enumerate(widths):
            level = nn.Module()
            c_prev = widths[i - 1] if i > 0 else widths[0]
            blocks, attns = [], []
            for j in range(spec.blocks_per_level):
                blocks.append(ResBlock(c_prev if j == 0 else w, w, groups, tdim))
                attns.append(TransformerBlock(w, spec.head_dim, groups, cw)
                             if attn[i] else None)
                skip_widths.append(w)
            level.blocks = nn.ModuleList(blocks)
            level.attns = nn.ModuleList([a for a in attns if a is not None]) \
                if attn[i] else None
            level.downsample = None
            if i < len(widths) - 1:
                level.downsample = Downsample(w)
                skip_widths.append(w)
            down.append(level)
        self.down = nn.ModuleList(down)

        bw = widths[-1]
        self.mid_block1 = ResBlock(bw, bw, groups, tdim)
        self.mid_attn = TransformerBlock(bw, spec.head_dim, groups, cw) \
            if spec.mid_attention else None
        self.mid_block2 = ResBlock(bw, bw, groups, tdim)

        up = []
        cur = bw
        for i in reversed(range(len(widths))):
            w = widths[i]
            level = nn.Module()
            blocks, attns = [], []
            for _ in range(spec.blocks_per_level + 1):
                sk = skip_widths.pop()
                blocks.append(ResBlock(cur + sk, w, groups, tdim, in_segs=(cur, sk)))
                attns.append(TransformerBlock(w, spec.head_dim, groups, cw)
                             if attn[i] else None)
                cur = w
            level.blocks = nn.ModuleList(blocks)
            level.attns = nn.ModuleList([a for a in attns if a is not None]) \
                if attn[i] else None
            level.upsample = Upsample(w) if i > 0 else None
            up.append(level)
        self.up = nn.ModuleList(up)
        assert not skip_widths

        self.norm_out = self.conv_out = None
        if spec.final_projection:
            self.norm_out = _gn(groups, widths[0])
            self.conv_out = _conv(widths[0], spec.out_channels, 3,
                                  out_segs=(spec.out_channels,))

    def forward(self, x: torch.Tensor, t: torch.Tensor | None = None,
                ctx: torch.Tensor | None = None) -> torch.Tensor:
        """t=None runs with a zero time contribution even when the embedding exists."""
        temb = None
        if self.time_embed is not None and t is not None:
            temb = self.time_embed(t)
        h = self.conv_in(x)
        skips = [h]
        for level in self.down:
            ai = 0
            for block in level.blocks:
                h = block(h, temb)
                if level.attns is not None:
                    h = level.attns[ai](h, ctx)
                    ai += 1
                skips.append(h)
            if level.downsample is not None:
                h = level.downsample(h)
                skips.append(h)
        h = self.mid_block1(h, temb)
        if self.mid_attn is not None:
            h = self.mid_attn(h, ctx)
        h = self.mid_block2(h, temb)
        for level in self.up:
            ai = 0
            for block in level.blocks:
                h = block(torch.cat([h, skips.pop()], dim=1), temb)
                if level.attns is not None:
                    h = level.attns[ai](h, ctx)
                    ai += 1
            if level.upsample is not None:
                h = level.upsample(h)
        if self.conv_out is not None:
            h = self.conv_out(F.silu(self.norm_out(h)))
        return h


class Encoder(nn.Module):
    """VAE encoder: image -> latent moments; encode() returns the mean."""

    def __init__(self, spec: VAESpec):
        super().__init__()
        self.spec = spec
        widths = spec.encoder_channels[::-1]   # walk from image resolution down
        g = spec.norm_groups
        self.conv_in = _conv(3, widths[0], 3, in_segs=(3,))
        levels = []
        for i, w in enumerate(widths):
            level = nn.Module()
            c_prev = widths[i - 1] if i > 0 else widths[0]
            level.blocks = nn.ModuleList(
                [ResBlock(c_prev if j == 0 else w, w, g) for j in range(spec.encoder_blocks)])
            level.downsample = Downsample(w) if i < len(widths) - 1 else None
            levels.append(level)
        self.levels = nn.ModuleList(levels)
        bw = widths[-1]
        self.mid_block1 = ResBlock(bw, bw, g)
        self.mid_attn = VAEAttention(bw, g) if spec.encoder_mid_attention else None
        self.mid_block2 = ResBlock(bw, bw, g)
        self.norm_out = _gn(g, bw)
        self.conv_out = _conv(bw, 2 * spec.latent_channels, 3,
                              out_segs=(2 * spec.latent_channels,))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = self.conv_in(x)
        for level in self.levels:
            for block in level.blocks:
                h = block(h)
            if level.downsample is not None:
                h = level.downsample(h)
        h = self.mid_block1(h)
        if self.mid_attn is not None:
            h = self.mid_attn(h)
        h = self.mid_block2(h)
        return self.conv_out(F.silu(self.norm_out(h)))

    def encode(self, x: torch.Tensor) -> torch.Tensor:
        """Deterministic latent: mean channels of the predicted moments."""
        return self.forward(x)[:, : self.spec.latent_channels]


class Decoder(nn.Module):
    """VAE decoder; distillation levels index its stages from the latent end.

    Level L (1-based) is the feature after stage L's blocks and before that
    stage's upsample, where stage 1 is the mid section at latent resolution.
    """

    def __init__(self, spec: VAESpec):
        super().__init__()
        self.spec = spec
        widths = spec.decoder_channels
        g = spec.decoder_norm_groups
        mw = widths[0]
        self.conv_in = None
        if spec.decoder_input_conv:
            self.conv_in = _conv(spec.latent_channels, mw, 3,
                                 in_segs=(spec.latent_channels,))
        self.mid_block1 = ResBlock(mw, mw, g)
        self.mid_attn = VAEAttention(mw, g) if spec.decoder_mid_attention else None
        self.mid_block2 = ResBlock(mw, mw, g)
        stages = []
        for i, w in enumerate(widths):
            stage = nn.Module()
            c_prev = widths[i - 1] if i > 0 else mw
            stage.blocks = nn.ModuleList(
                [ResBlock(c_prev if j == 0 else w, w, g) for j in range(spec.decoder_blocks)])
            stage.upsample = Upsample(w) if i < len(widths) - 1 else None
            stages.append(stage)
        self.stages = nn.ModuleList(stages)
        self.norm_out = _gn(g, widths[-1])
        self.conv_out = _conv(widths[-1], 3, 3, out_segs=(3,))

    @property
    def max_level(self) -> int:
        return len(self.spec.decoder_channels)

    def stem(self, z: torch.Tensor) -> torch.Tensor:
        if self.conv_in is None:
            raise BuildError("decoder has no input conv (bridge mode)")
        return self.conv_in(z)

    def _mid(self, h: torch.Tensor) -> torch.Tensor:
        h = self.mid_block1(h)
        if self.mid_attn is not None:
            h = self.mid_attn(h)
        return self.mid_block2(h)

    def run_to(self, h: torch.Tensor, level: int) -> torch.Tensor:
        """Post-stem feature -> feature at `level` (before that stage's upsample)."""
        if not (1 <= level <= self.max_level):
            raise BuildError(f"level must be in [1, {self.max_level}], got {level}")
        h = self._mid(h)
        if level == 1:
            return h
        for i, stage in enumerate(self.stages):
            for block in stage.blocks:
                h = block(h)
            if level == i + 2:
                return h
            if stage.upsample is not None:
                h = stage.upsample(h)
        raise AssertionError("unreachable")

    def run_from(self, h: torch.Tensor, level: int) -> torch.Tensor:
        """Feature at `level` -> image tensor (completes the remaining stages)."""
        if not (1 <= level <= self.max_level):
            raise BuildError(f"level must be in [1, {self.max_level}], got {level}")
        if level >= 2 and self.stages[level - 2].upsample is not None:
            h = self.stages[level - 2].upsample(h)
        for i in range(level - 1, len(self.stages)):
            for block in self.stages[i].blocks:
                h = block(h)
            if self.stages[i].upsample is not None:
                h = self.stages[i].upsample(h)
        return self.conv_out(F.silu(self.norm_out(h)))

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        return self.run_from(self.run_to(self.stem(z), 1), 1)


class AdcModel(nn.Module):
    """Container for the parts a config declares: unet/encoder/decoder/bridge/cond."""

    def __init__(self, cfg: ArchConfig):
        super().__init__()
        validate(cfg)
        self.cfg = cfg
        ctx_width = cfg.conditioning.width if cfg.conditioning else None
        self.unet = UNetModel(cfg.unet, ctx_width)
        self.encoder = Encoder(cfg.vae) if cfg.vae.encoder_present else None
        self.decoder = Decoder(cfg.vae)
        self.bridge = None
        if cfg.bridge.enabled:
            self.bridge = _conv(cfg.bridge.in_channels, cfg.bridge.out_channels,
                                cfg.bridge.kernel)
        self.cond = None
        if cfg.conditioning is not None and cfg.conditioning.kind == "embedding":
            self.cond = ConditioningStub(cfg.conditioning.tokens, cfg.conditioning.width)

    def noise_schedule(self) -> NoiseSchedule:
        s = self.cfg.schedule
        return NoiseSchedule(make_alpha_bar(s.steps, s.beta_start, s.beta_end), s.t_index)


def init_weights(module: nn.Module, seed: int) -> None:
    """Gaussian(0, 0.02) weights, zero biases, unit norm gains; name-ordered."""
    gen = torch.Generator().manual_seed(seed)
    for name, m in sorted(module.named_modules(), key=lambda kv: kv[0]):
        with torch.no_grad():
            if isinstance(m, (nn.Conv2d, nn.Linear)):
                m.weight.normal_(0.0, 0.02, generator=gen)
                if m.bias is not None:
                    m.bias.zero_()
            elif isinstance(m, nn.Embedding):
                m.weight.normal_(0.0, 0.02, generator=gen)
            elif isinstance(m, (nn.GroupNorm, nn.LayerNorm)):
                m.weight.fill_(1.0)
                m.bias.zero_()


def build_modules(cfg: ArchConfig, device: str = "cpu") -> AdcModel:
    with torch.device(device):
        return AdcModel(cfg)


@dataclass
class Network:
    """A built model plus its config; weights cross the numpy boundary here."""

    cfg: ArchConfig
    module: AdcModel

    def weights(self) -> WeightStore:
        ws = WeightStore()
        for name, p in self.module.state_dict().items():
            ws[name] = p.detach().cpu().numpy().copy()
        return ws

    def load_weights(self, ws: WeightStore) -> None:
        state = self.module.state_dict()
        missing = sorted(set(state) - set(ws))
        extra = sorted(set(ws) - set(state))
        bad_shape = sorted(
            name for name in set(state) & set(ws)
            if tuple(state[name].shape) != tuple(ws[name].shape))
        if missing or extra or bad_shape:
            raise BuildError(
                "weight store does not match config: "
                f"missing={missing[:8]} unexpected={extra[:8]} shape_mismatch={bad_shape[:8]}")
        dtype = next(iter(state.values())).dtype if state else torch.float32
        self.module.load_state_dict(
            {k: torch.from_numpy(np.ascontiguousarray(v)).to(dtype) for k, v in ws.items()})

    def param_count(self) -> int:
        return sum(p.numel() for p in self.module.parameters())


def build_network(cfg: ArchConfig, init: WeightStore | None = None,
                  seed: int = 0) -> Network:
    module = build_modules(cfg)
    init_weights(module, seed)
    net = Network(cfg, module)
    if init is not None:
        net.load_weights(init)
    return net


# ---------------------------------------------------------------------------
# Layout: per-parameter shapes and channel segments, derived from a meta build.


@dataclass(frozen=True)
class ParamInfo:
    shape: tuple[int, ...]
    out_segments: tuple[int, ...]  # axis 0 blocks
    in_segments: tuple[int, ...]   # axis 1 blocks ((), for 1-D params)


def weight_layout(cfg: ArchConfig) -> dict[str, ParamInfo]:
    """Name -> ParamInfo for every parameter build_network(cfg) would create."""
    model = build_modules(cfg, device="meta")
    layout: dict[str, ParamInfo] = {}
    for mod_name, m in model.named_modules():
        if not hasattr(m, "_seg_out"):
            continue
        prefix = mod_name + "." if mod_name else ""
        out_segs, in_segs = m._seg_out, m._seg_in
        if isinstance(m, (nn.Conv2d, nn.Linear)):
            layout[prefix + "weight"] = ParamInfo(tuple(m.weight.shape), out_segs, in_segs)
            if m.bias is not None:
                layout[prefix + "bias"] = ParamInfo(tuple(m.bias.shape), out_segs, ())
        elif isinstance(m, nn.Embedding):
            layout[prefix + "weight"] = ParamInfo(tuple(m.weight.shape), out_segs, in_segs)
        elif isinstance(m, (nn.GroupNorm, nn.LayerNorm)):
            layout[prefix + "weight"] = ParamInfo(tuple(m.weight.shape), out_segs, ())
            layout[prefix + "bias"] = ParamInfo(tuple(m.bias.shape), out_segs, ())
    state_names = set(model.state_dict().keys())
    if state_names != set(layout):
        missing = sorted(state_names - set(layout))
        extra = sorted(set(layout) - state_names)
        raise BuildError(f"layout drift: missing={missing[:8]} extra={extra[:8]}")
    return layout
