"""Seeded LR-HR pair synthesis.

Training pairs are made by pushing an HR image through a randomized chain of
blur / rescale / noise / JPEG stages (repeated ``n_orders`` times) and then
downscaling to exactly 1/4 resolution. Every random draw is derived from
(master_seed, sample index), so synthesis is reproducible regardless of how
samples are scheduled across workers.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass

import numpy as np
import scipy.fft
import scipy.ndimage

from . import seeding
from .imaging import RGB, Image, resize

SCHEMA_VERSION = 1
SEED_POLICY = "hash-master-index"
RESCALE_KERNELS = ("bicubic", "bilinear", "area")


class DegradeError(ValueError):
    """Invalid recipe or synthesis input."""


# ---------------------------------------------------------------------------
# Recipe


@dataclass(frozen=True)
class DegradationStage:
    """One stage descriptor; each family is enabled by a non-None range.

    Ranges are inclusive (lo, hi) pairs. ``rescale`` draws a relative scale
    applied to the current working size; ``jpeg_quality`` draws an integer.
    """

    blur_sigma: tuple[float, float] | None = None
    rescale: tuple[float, float] | None = None
    rescale_kernels: tuple[str, ...] = RESCALE_KERNELS
    noise_sigma: tuple[float, float] | None = None
    jpeg_quality: tuple[int, int] | None = None


@dataclass(frozen=True)
class DegradationRecipe:
    stages: tuple[DegradationStage, ...] = ()
    n_orders: int = 1
    final_scale: int = 4
    seed_policy: str = SEED_POLICY

    def validate(self) -> None:
        if self.n_orders < 1:
            raise DegradeError(f"n_orders must be >= 1, got {self.n_orders}")
        if self.final_scale != 4:
            raise DegradeError(f"final_scale is fixed at 4, got {self.final_scale}")
        if self.seed_policy != SEED_POLICY:
            raise DegradeError(f"unknown seed policy {self.seed_policy!r}")
        for i, st in enumerate(self.stages):
            ranges = (st.blur_sigma, st.rescale, st.noise_sigma, st.jpeg_quality)
            if all(r is None for r in ranges):
                raise DegradeError(f"stage {i} enables no degradation family")
            if st.blur_sigma is not None:
                lo, hi = st.blur_sigma
                if not 0.0 < lo <= hi:
                    raise DegradeError(f"stage {i}: bad blur sigma range {st.blur_sigma}")
            if st.rescale is not None:
                lo, hi = st.rescale
                if not 0.0 < lo <= hi:
                    raise DegradeError(f"stage {i}: bad rescale range {st.rescale}")
                if not st.rescale_kernels:
                    raise DegradeError(f"stage {i}: empty rescale kernel set")
                for k in st.rescale_kernels:
                    if k not in RESCALE_KERNELS:
                        raise DegradeError(f"stage {i}: unknown rescale kernel {k!r}")
            if st.noise_sigma is not None:
                lo, hi = st.noise_sigma
                if not 0.0 <= lo <= hi:
                    raise DegradeError(f"stage {i}: bad noise sigma range {st.noise_sigma}")
            if st.jpeg_quality is not None:
                lo, hi = st.jpeg_quality
                if not (isinstance(lo, int) and isinstance(hi, int)):
                    raise DegradeError(f"stage {i}: jpeg quality range must be integer")
                if not 1 <= lo <= hi <= 100:
                    raise DegradeError(f"stage {i}: bad jpeg quality range {st.jpeg_quality}")


def recipe_to_json(recipe: DegradationRecipe) -> str:
    recipe.validate()
    stages = []
    for st in recipe.stages:
        d = {}
        if st.blur_sigma is not None:
            d["blur_sigma"] = list(st.blur_sigma)
        if st.rescale is not None:
            d["rescale"] = list(st.rescale)
            d["rescale_kernels"] = list(st.rescale_kernels)
        if st.noise_sigma is not None:
            d["noise_sigma"] = list(st.noise_sigma)
        if st.jpeg_quality is not None:
            d["jpeg_quality"] = list(st.jpeg_quality)
        stages.append(d)
    doc = {
        "schema_version": SCHEMA_VERSION,
        "stages": stages,
        "n_orders": recipe.n_orders,
        "final_scale": recipe.final_scale,
        "seed_policy": recipe.seed_policy,
    }
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def recipe_from_json(text: str) -> DegradationRecipe:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise DegradeError(f"recipe is not valid JSON: {e}") from e
    if not isinstance(doc, dict):
        raise DegradeError("recipe JSON must be an object")
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise DegradeError(f"unsupported recipe schema_version {doc.get('schema_version')!r}")
    stages = []
    raw_stages = doc.get("stages", [])
    if not isinstance(raw_stages, list):
        raise DegradeError("recipe 'stages' must be a list")
    for raw in raw_stages:
        if not isinstance(raw, dict):
            raise DegradeError("each stage descriptor must be an object")
        known = {"blur_sigma", "rescale", "rescale_kernels", "noise_sigma", "jpeg_quality"}
        extra = set(raw) - known
        if extra:
            raise DegradeError(f"unknown stage fields {sorted(extra)}")

        def pair(key, cast):
            if key not in raw:
                return None
            v = raw[key]
            if not isinstance(v, list) or len(v) != 2:
                raise DegradeError(f"stage field {key!r} must be a [lo, hi] pair")
            return (cast(v[0]), cast(v[1]))

        stages.append(
            DegradationStage(
                blur_sigma=pair("blur_sigma", float),
                rescale=pair("rescale", float),
                rescale_kernels=tuple(raw.get("rescale_kernels", RESCALE_KERNELS)),
                noise_sigma=pair("noise_sigma", float),
                jpeg_quality=pair("jpeg_quality", int),
            )
        )
    recipe = DegradationRecipe(
        stages=tuple(stages),
        n_orders=int(doc.get("n_orders", 1)),
        final_scale=int(doc.get("final_scale", 4)),
        seed_policy=str(doc.get("seed_policy", SEED_POLICY)),
    )
    recipe.validate()
    return recipe


def recipe_hash(recipe: DegradationRecipe) -> str:
    """Stable content hash used by synthesis manifests."""
    return hashlib.sha256(recipe_to_json(recipe).encode("utf-8")).hexdigest()


def identity_recipe() -> DegradationRecipe:
    """No degradation stages: plain bicubic 1/4 downscale."""
    return DegradationRecipe(stages=(), n_orders=1)


def realesrgan_lite() -> DegradationRecipe:
    """Desk-scale stand-in ranges for a high-order degradation chain.

    One stage enabling all four families, applied twice (n_orders=2). The
    ranges are package presets, not published values.
    """
    stage = DegradationStage(
        blur_sigma=(0.2, 3.0),
        rescale=(0.5, 1.0),
        rescale_kernels=RESCALE_KERNELS,
        noise_sigma=(0.0, 0.06),
        jpeg_quality=(30, 95),
    )
    return DegradationRecipe(stages=(stage,), n_orders=2)


RECIPE_PRESETS = {
    "identity": identity_recipe,
    "realesrgan-lite": realesrgan_lite,
}


# ---------------------------------------------------------------------------
# Parameter draws


@dataclass(frozen=True)
class StageParams:
    blur_sigma: float | None = None
    rescale: float | None = None
    rescale_kernel: str | None = None
    noise_sigma: float | None = None
    jpeg_quality: int | None = None


def draw_params(
    recipe: DegradationRecipe, index: int, master_seed: int
) -> tuple[tuple[StageParams, ...], ...]:
    """Concrete per-order, per-stage parameters for one sample.

    Draw order is fixed (orders, then stages, then blur/rescale/noise/jpeg)
    so the realized values depend only on (recipe, index, master_seed).
    """
    recipe.validate()
    g = seeding.generator(master_seed, "degrade", int(index), "params")
    orders = []
    for _ in range(recipe.n_orders):
        drawn = []
        for st in recipe.stages:
            blur = scale = kernel = noise = quality = None
            if st.blur_sigma is not None:
                blur = float(g.uniform(st.blur_sigma[0], st.blur_sigma[1]))
            if st.rescale is not None:
                scale = float(g.uniform(st.rescale[0], st.rescale[1]))
                kernel = st.rescale_kernels[int(g.integers(len(st.rescale_kernels)))]
            if st.noise_sigma is not None:
                noise = float(g.uniform(st.noise_sigma[0], st.noise_sigma[1]))
            if st.jpeg_quality is not None:
                quality = int(g.integers(st.jpeg_quality[0], st.jpeg_quality[1] + 1))
            drawn.append(
                StageParams(
                    blur_sigma=blur,
                    rescale=scale,
                    rescale_kernel=kernel,
                    noise_sigma=noise,
                    jpeg_quality=quality,
                )
            )
        orders.append(tuple(drawn))
    return tuple(orders)


# ---------------------------------------------------------------------------
# Stage kernels


def _gaussian_blur(arr: np.ndarray, sigma: float) -> np.ndarray:
    # Spatial axes only; mirror padding keeps borders energy-preserving.
    return scipy.ndimage.gaussian_filter(arr, sigma=(0.0, sigma, sigma), mode="mirror", truncate=3.0)


# JPEG Annex K base quantization tables (luminance, chrominance).
_JPEG_LUMA = np.array(
    [
        [16, 11, 10, 16, 24, 40, 51, 61],
        [12, 12, 14, 19, 26, 58, 60, 55],
        [14, 13, 16, 24, 40, 57, 69, 56],
        [14, 17, 22, 29, 51, 87, 80, 62],
        [18, 22, 37, 56, 68, 109, 103, 77],
        [24, 35, 55, 64, 81, 104, 113, 92],
        [49, 64, 78, 87, 103, 121, 120, 101],
        [72, 92, 95, 98, 112, 100, 103, 99],
    ],
    dtype=np.int64,
)
_JPEG_CHROMA = np.array(
    [
        [17, 18, 24, 47, 99, 99, 99, 99],
        [18, 21, 26, 66, 99, 99, 99, 99],
        [24, 26, 56, 99, 99, 99, 99, 99],
        [47, 66, 99, 99, 99, 99, 99, 99],
        [99, 99, 99, 99, 99, 99, 99, 99],
        [99, 99, 99, 99, 99, 99, 99, 99],
        [99, 99, 99, 99, 99, 99, 99, 99],
        [99, 99, 99, 99, 99, 99, 99, 99],
    ],
    dtype=np.int64,
)


def jpeg_tables(quality: int) -> np.ndarray:
    """Quality-scaled (2, 8, 8) quantization tables, integer math as in libjpeg."""
    if not 1 <= quality <= 100:
        raise DegradeError(f"jpeg quality must be in [1, 100], got {quality}")
    scale = 5000 // quality if quality < 50 else 200 - 2 * quality
    base = np.stack([_JPEG_LUMA, _JPEG_CHROMA])
    return np.clip((base * scale + 50) // 100, 1, 255)


def _jpeg_roundtrip(arr: np.ndarray, quality: int) -> np.ndarray:
    """8x8 DCT quantization round-trip on full-range YCbCr, no subsampling.

    Input and output are (3, H, W) float64 in [0, 1].
    """
    r, g, b = arr * 255.0
    y = 0.299 * r + 0.587 * g + 0.114 * b
    cb = 128.0 + (b - y) / 1.772
    cr = 128.0 + (r - y) / 1.402
    planes = np.stack([y, cb, cr]) - 128.0

    h, w = planes.shape[1:]
    ph, pw = (-h) % 8, (-w) % 8
    planes = np.pad(planes, ((0, 0), (0, ph), (0, pw)), mode="edge")
    nbh, nbw = planes.shape[1] // 8, planes.shape[2] // 8
    blocks = planes.reshape(3, nbh, 8, nbw, 8)

    tbl = jpeg_tables(quality).astype(np.float64)
    # Channel 0 quantizes with the luminance table, channels 1-2 with chroma.
    div = np.stack([tbl[0], tbl[1], tbl[1]])[:, None, :, None, :]
    coef = scipy.fft.dctn(blocks, axes=(2, 4), norm="ortho")
    coef = np.round(coef / div) * div
    blocks = scipy.fft.idctn(coef, axes=(2, 4), norm="ortho")

    planes = blocks.reshape(3, nbh * 8, nbw * 8)[:, :h, :w] + 128.0
    y, cb, cr = planes
    r = y + 1.402 * (cr - 128.0)
    b = y + 1.772 * (cb - 128.0)
    g = (y - 0.299 * r - 0.114 * b) / 0.587
    return np.clip(np.stack([r, g, b]) / 255.0, 0.0, 1.0)


# ---------------------------------------------------------------------------
# Synthesis


def synth_pair(
    x_hr: Image, recipe: DegradationRecipe, index: int, master_seed: int
) -> tuple[Image, Image]:
    """Degrade one HR image into its LR pair.

    Returns (x_lr, x_hr) with the LR side exactly 1/4 the HR resolution.
    Deterministic in (recipe, index, master_seed); realized noise fields use
    a stream separate from the parameter draws so that inspecting parameters
    via draw_params never perturbs synthesis.
    """
    recipe.validate()
    if x_hr.space != RGB:
        raise DegradeError(f"synth_pair expects an RGB image, got {x_hr.space!r}")
    h, w = x_hr.height, x_hr.width
    if h % recipe.final_scale or w % recipe.final_scale:
        raise DegradeError(f"HR dims {h}x{w} not divisible by {recipe.final_scale}")

    params = draw_params(recipe, index, master_seed)
    g_noise = seeding.generator(master_seed, "degrade", int(index), "noise")

    arr = x_hr.data.astype(np.float64)
    for order in params:
        for sp in order:
            if sp.blur_sigma is not None:
                arr = np.clip(_gaussian_blur(arr, sp.blur_sigma), 0.0, 1.0)
            if sp.rescale is not None:
                th = max(1, int(round(arr.shape[1] * sp.rescale)))
                tw = max(1, int(round(arr.shape[2] * sp.rescale)))
                arr = np.clip(resize(arr, (th, tw), kernel=sp.rescale_kernel), 0.0, 1.0)
            if sp.noise_sigma is not None:
                arr = np.clip(arr + g_noise.normal(0.0, sp.noise_sigma, arr.shape), 0.0, 1.0)
            if sp.jpeg_quality is not None:
                arr = _jpeg_roundtrip(arr, sp.jpeg_quality)

    lr_hw = (h // recipe.final_scale, w // recipe.final_scale)
    arr = np.clip(resize(arr, lr_hw, kernel="bicubic"), 0.0, 1.0)
    if not np.isfinite(arr).all():
        raise DegradeError("synthesis produced non-finite values")
    return Image(arr.astype(np.float32)), x_hr


# ---------------------------------------------------------------------------
# Self-contained HR corpus


def demo_hr_images(count: int, size: int, master_seed: int) -> list[Image]:
    """Procedural HR images for demos and end-to-end runs without a dataset.

    Smooth random color fields plus sinusoidal texture and per-channel
    gradients; enough structure for metrics and training smoke runs.
    """
    if count < 1:
        raise DegradeError(f"count must be >= 1, got {count}")
    if size < 8 or size % 8:
        raise DegradeError(f"size must be a positive multiple of 8, got {size}")
    out = []
    yy, xx = np.meshgrid(
        np.linspace(0.0, 1.0, size), np.linspace(0.0, 1.0, size), indexing="ij"
    )
    for i in range(count):
        g = seeding.generator(master_seed, "demo-hr", i)
        base = g.uniform(0.0, 1.0, (3, size // 8, size // 8))
        img = resize(base, (size, size), kernel="bicubic")
        for c in range(3):
            fy, fx = g.uniform(1.0, 6.0, 2)
            phase = g.uniform(0.0, 2.0 * math.pi)
            img[c] += 0.15 * np.sin(2.0 * math.pi * (fy * yy + fx * xx) + phase)
            img[c] += g.uniform(-0.2, 0.2) * (yy - 0.5) + g.uniform(-0.2, 0.2) * (xx - 0.5)
        out.append(Image(np.clip(img, 0.0, 1.0).astype(np.float32)))
    return out


def stage_families(recipe: DegradationRecipe) -> tuple[str, ...]:
    """Names of the families the recipe can apply, in application order."""
    fams = []
    for st in recipe.stages:
        if st.blur_sigma is not None and "blur" not in fams:
            fams.append("blur")
        if st.rescale is not None and "rescale" not in fams:
            fams.append("rescale")
        if st.noise_sigma is not None and "noise" not in fams:
            fams.append("noise")
        if st.jpeg_quality is not None and "jpeg" not in fams:
            fams.append("jpeg")
    return tuple(fams)
