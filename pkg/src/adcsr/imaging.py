"""Shared imaging primitives: image container, pixel (un)shuffle, color, PNG I/O, resampling.

Conventions used throughout the toolkit:
  * an image is channel-first float data in [0, 1];
  * a feature map is a 4-D (batch, channel, height, width) array or tensor;
  * pixel_unshuffle packs each r x r spatial block into channels with output
    channel index c * r**2 + dy * r + dx for source offset (dy, dx) — weight
    tiling in surgery depends on exactly this ordering.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from einops import rearrange
from PIL import Image as _PILImage

RGB = "rgb"
YCBCR = "ycbcr"

# BT.601 full-range luma weights.
_Y_WEIGHTS = (0.299, 0.587, 0.114)


class ImagingError(ValueError):
    pass


@dataclass
class Image:
    """A single image: float32/float64 array of shape (3, H, W), values in [0, 1]."""

    data: np.ndarray
    space: str = RGB

    def __post_init__(self):
        a = np.asarray(self.data)
        if a.ndim != 3 or a.shape[0] != 3:
            raise ImagingError(f"image must have shape (3, H, W), got {a.shape}")
        if a.dtype not in (np.float32, np.float64):
            raise ImagingError(f"image dtype must be float32/float64, got {a.dtype}")
        if not np.isfinite(a).all():
            raise ImagingError("image contains non-finite values")
        if a.min() < 0.0 or a.max() > 1.0:
            raise ImagingError("image values outside [0, 1]")
        if self.space not in (RGB, YCBCR):
            raise ImagingError(f"unknown color space {self.space!r}")
        self.data = a

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]


def validate_feature_map(x) -> None:
    """Reject anything that is not a finite 4-D BCHW array/tensor."""
    if x.ndim != 4:
        raise ImagingError(f"feature map must be 4-D (B, C, H, W), got ndim={x.ndim}")
    if isinstance(x, torch.Tensor):
        finite = bool(torch.isfinite(x).all())
    else:
        finite = bool(np.isfinite(x).all())
    if not finite:
        raise ImagingError("feature map contains non-finite values")


def pixel_unshuffle(x, r: int):
    """Pack r x r spatial blocks into channels: (B,C,H*r,W*r) -> (B,C*r*r,H,W)."""
    if r < 1:
        raise ImagingError(f"shuffle factor must be >= 1, got {r}")
    validate_feature_map(x)
    _, _, h, w = x.shape
    if h % r or w % r:
        raise ImagingError(f"spatial dims ({h}, {w}) not divisible by r={r}")
    return rearrange(x, "b c (h r1) (w r2) -> b (c r1 r2) h w", r1=r, r2=r)


def pixel_shuffle(x, r: int):
    """Inverse of pixel_unshuffle: (B,C*r*r,H,W) -> (B,C,H*r,W*r)."""
    if r < 1:
        raise ImagingError(f"shuffle factor must be >= 1, got {r}")
    validate_feature_map(x)
    c = x.shape[1]
    if c % (r * r):
        raise ImagingError(f"channel count {c} not divisible by r^2={r * r}")
    return rearrange(x, "b (c r1 r2) h w -> b c (h r1) (w r2)", r1=r, r2=r)


def rgb_to_y(img: Image) -> np.ndarray:
    """Full-range BT.601 luma, shape (H, W). Input must be RGB."""
    if img.space != RGB:
        raise ImagingError(f"rgb_to_y expects an RGB image, got {img.space!r}")
    r, g, b = img.data.astype(np.float64)
    return _Y_WEIGHTS[0] * r + _Y_WEIGHTS[1] * g + _Y_WEIGHTS[2] * b


def rgb_to_ycbcr(img: Image) -> Image:
    """Full-range BT.601 conversion; all three channels stay in [0, 1]."""
    if img.space != RGB:
        raise ImagingError(f"rgb_to_ycbcr expects an RGB image, got {img.space!r}")
    r, g, b = img.data.astype(np.float64)
    y = _Y_WEIGHTS[0] * r + _Y_WEIGHTS[1] * g + _Y_WEIGHTS[2] * b
    cb = 0.5 + (b - y) / 1.772
    cr = 0.5 + (r - y) / 1.402
    out = np.clip(np.stack([y, cb, cr]), 0.0, 1.0)
    return Image(out, space=YCBCR)


def to_tensor(img: Image, dtype=torch.float32) -> torch.Tensor:
    """Image -> (1, 3, H, W) tensor."""
    return torch.from_numpy(np.ascontiguousarray(img.data)).to(dtype).unsqueeze(0)


def from_tensor(t: torch.Tensor, space: str = RGB) -> Image:
    """(1, 3, H, W) or (3, H, W) tensor -> Image, clamped to [0, 1]."""
    if t.ndim == 4:
        if t.shape[0] != 1:
            raise ImagingError("from_tensor expects batch size 1")
        t = t[0]
    a = t.detach().cpu().numpy().astype(np.float32)
    return Image(np.clip(a, 0.0, 1.0), space=space)


def save_png(img: Image, path) -> None:
    """8-bit PNG; float values quantized with round-half-up on 255*x."""
    if img.space != RGB:
        raise ImagingError("save_png expects an RGB image")
    q = np.floor(img.data * 255.0 + 0.5)
    q = np.clip(q, 0, 255).astype(np.uint8)
    _PILImage.fromarray(q.transpose(1, 2, 0), mode="RGB").save(path, format="PNG")


def load_png(path) -> Image:
    """PNG -> float32 RGB image via /255."""
    with _PILImage.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float32)
    return Image(arr.transpose(2, 0, 1) / np.float32(255.0))


# ---------------------------------------------------------------------------
# Separable resampling (cubic a=-0.5, triangle, box), PIL-style windowing.


def _cubic(x: np.ndarray, a: float = -0.5) -> np.ndarray:
    ax = np.abs(x)
    out = np.zeros_like(ax)
    m1 = ax < 1
    m2 = (ax >= 1) & (ax < 2)
    out[m1] = (a + 2) * ax[m1] ** 3 - (a + 3) * ax[m1] ** 2 + 1
    out[m2] = a * ax[m2] ** 3 - 5 * a * ax[m2] ** 2 + 8 * a * ax[m2] - 4 * a
    return out


def _triangle(x: np.ndarray) -> np.ndarray:
    return np.clip(1.0 - np.abs(x), 0.0, None)


def _box(x: np.ndarray) -> np.ndarray:
    return ((x >= -0.5) & (x < 0.5)).astype(np.float64)


_KERNELS = {"bicubic": (_cubic, 2.0), "bilinear": (_triangle, 1.0), "area": (_box, 0.5)}


def _resample_matrix(n_in: int, n_out: int, kernel: str, antialias: bool) -> np.ndarray:
    """Row-stochastic (n_out, n_in) matrix for 1-D resampling along an axis."""
    fn, support = _KERNELS[kernel]
    scale = n_in / n_out
    fscale = max(1.0, scale) if antialias else 1.0
    support = support * fscale
    mat = np.zeros((n_out, n_in), dtype=np.float64)
    for j in range(n_out):
        center = (j + 0.5) * scale
        lo = max(int(math.floor(center - support + 0.5)), 0)
        hi = min(int(math.floor(center + support + 0.5)), n_in)
        idx = np.arange(lo, hi)
        w = fn((idx + 0.5 - center) / fscale)
        s = w.sum()
        if s == 0.0 or hi <= lo:
            # Degenerate window (extreme box scales): fall back to nearest.
            mat[j, min(max(int(center), 0), n_in - 1)] = 1.0
        else:
            mat[j, lo:hi] = w / s
    return mat


def resize(arr: np.ndarray, out_hw: tuple[int, int], kernel: str = "bicubic",
           antialias: bool = True) -> np.ndarray:
    """Resample (C, H, W) or (H, W) float data to out_hw; returns float64.

    Downscales are antialiased (kernel support stretched by the scale factor)
    unless antialias=False; upscales are unaffected by the flag. Borders use
    window clipping with weight renormalization.
    """
    if kernel not in _KERNELS:
        raise ImagingError(f"unknown kernel {kernel!r}")
    squeeze = arr.ndim == 2
    a = np.asarray(arr, dtype=np.float64)
    if squeeze:
        a = a[None]
    if a.ndim != 3:
        raise ImagingError(f"resize expects (C, H, W) or (H, W), got {arr.shape}")
    out_h, out_w = out_hw
    if out_h < 1 or out_w < 1:
        raise ImagingError(f"invalid output size {out_hw}")
    mh = _resample_matrix(a.shape[1], out_h, kernel, antialias)
    mw = _resample_matrix(a.shape[2], out_w, kernel, antialias)
    out = np.einsum("oh,chw,pw->cop", mh, a, mw, optimize=True)
    return out[0] if squeeze else out


def resize_image(img: Image, out_hw: tuple[int, int], kernel: str = "bicubic") -> Image:
    out = np.clip(resize(img.data, out_hw, kernel), 0.0, 1.0).astype(np.float32)
    return Image(out, space=img.space)
