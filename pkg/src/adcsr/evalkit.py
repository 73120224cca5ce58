"""Reference-based quality metrics on the luma channel, plus report assembly.

PSNR and SSIM are computed on full-range BT.601 Y in float64. SSIM uses the
standard 11-tap Gaussian window (sigma 1.5, K1=0.01, K2=0.03) and averages
only windows that lie fully inside the image, so border padding never enters
the score.
"""

from __future__ import annotations

import csv
import io
import math
import subprocess
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.ndimage

from .imaging import Image, load_png, rgb_to_y

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


class EvalError(ValueError):
    """Metric precondition violation or directory pairing failure."""


def _luma_pair(a: Image, b: Image) -> tuple[np.ndarray, np.ndarray]:
    if a.data.shape != b.data.shape:
        raise EvalError(f"image dims differ: {a.data.shape} vs {b.data.shape}")
    return rgb_to_y(a), rgb_to_y(b)


def psnr_y(a: Image, b: Image) -> float:
    """10*log10(1/MSE) over Y; math.inf for identical inputs."""
    ya, yb = _luma_pair(a, b)
    mse = float(np.mean((ya - yb) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def _ssim_filter(x: np.ndarray) -> np.ndarray:
    # truncate=3.5 puts the kernel radius at int(3.5*1.5+0.5)=5, i.e. 11 taps.
    return scipy.ndimage.gaussian_filter(x, SSIM_SIGMA, truncate=3.5, mode="reflect")


def ssim_y(a: Image, b: Image) -> float:
    """Mean local SSIM over Y channels; valid windows only."""
    ya, yb = _luma_pair(a, b)
    h, w = ya.shape
    if h < SSIM_WINDOW or w < SSIM_WINDOW:
        raise EvalError(f"image {h}x{w} smaller than the {SSIM_WINDOW}-tap SSIM window")
    c1 = SSIM_K1 ** 2
    c2 = SSIM_K2 ** 2

    ux = _ssim_filter(ya)
    uy = _ssim_filter(yb)
    uxx = _ssim_filter(ya * ya)
    uyy = _ssim_filter(yb * yb)
    uxy = _ssim_filter(ya * yb)
    vx = uxx - ux * ux
    vy = uyy - uy * uy
    vxy = uxy - ux * uy

    num = (2.0 * ux * uy + c1) * (2.0 * vxy + c2)
    den = (ux * ux + uy * uy + c1) * (vx + vy + c2)
    ssim_map = num / den
    pad = (SSIM_WINDOW - 1) // 2
    return float(ssim_map[pad : h - pad, pad : w - pad].mean())


# ---------------------------------------------------------------------------
# Reports


@dataclass(frozen=True)
class MetricRow:
    name: str
    psnr_y: float
    ssim_y: float


@dataclass(frozen=True)
class MetricReport:
    rows: tuple[MetricRow, ...]

    @property
    def count(self) -> int:
        return len(self.rows)

    @property
    def psnr_inf_count(self) -> int:
        return sum(1 for r in self.rows if math.isinf(r.psnr_y))

    @property
    def psnr_mean(self) -> float:
        finite = [r.psnr_y for r in self.rows if math.isfinite(r.psnr_y)]
        return float(np.mean(finite)) if finite else math.inf

    @property
    def ssim_mean(self) -> float:
        return float(np.mean([r.ssim_y for r in self.rows]))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["name", "psnr_y", "ssim_y"])
        for r in self.rows:
            p = "inf" if math.isinf(r.psnr_y) else f"{r.psnr_y:.6f}"
            w.writerow([r.name, p, f"{r.ssim_y:.6f}"])
        p = "inf" if math.isinf(self.psnr_mean) else f"{self.psnr_mean:.6f}"
        w.writerow(["mean", p, f"{self.ssim_mean:.6f}"])
        if self.psnr_inf_count:
            w.writerow(["psnr_inf_count", str(self.psnr_inf_count), ""])
        return buf.getvalue()

    def render_table(self) -> str:
        width = max([len("name"), len("mean")] + [len(r.name) for r in self.rows])
        lines = [f"{'name':<{width}}  {'psnr_y (dB)':>12}  {'ssim_y':>8}"]
        lines.append("-" * len(lines[0]))
        for r in self.rows:
            p = "inf" if math.isinf(r.psnr_y) else f"{r.psnr_y:12.4f}"
            lines.append(f"{r.name:<{width}}  {p:>12}  {r.ssim_y:8.4f}")
        lines.append("-" * len(lines[0]))
        p = "inf" if math.isinf(self.psnr_mean) else f"{self.psnr_mean:12.4f}"
        lines.append(f"{'mean':<{width}}  {p:>12}  {self.ssim_mean:8.4f}")
        if self.psnr_inf_count:
            lines.append(
                f"note: psnr mean excludes {self.psnr_inf_count} identical pair(s) (psnr=inf)"
            )
        return "\n".join(lines) + "\n"


def _crop(img: Image, border: int) -> Image:
    if border == 0:
        return img
    h, w = img.height, img.width
    if 2 * border >= min(h, w):
        raise EvalError(f"crop border {border} leaves no pixels on {h}x{w} image")
    return Image(img.data[:, border : h - border, border : w - border], space=img.space)


def evaluate_dir(sr_dir, gt_dir, crop_border: int = 0) -> MetricReport:
    """Pair PNGs by filename across two directories and score each pair."""
    sr_dir, gt_dir = Path(sr_dir), Path(gt_dir)
    sr_names = {p.name for p in sr_dir.glob("*.png")}
    gt_names = {p.name for p in gt_dir.glob("*.png")}
    only_sr = sorted(sr_names - gt_names)
    only_gt = sorted(gt_names - sr_names)
    if only_sr or only_gt:
        raise EvalError(
            f"unmatched filenames; only in {sr_dir}: {only_sr or 'none'}, "
            f"only in {gt_dir}: {only_gt or 'none'}"
        )
    common = sorted(sr_names)
    if not common:
        raise EvalError(f"no paired .png files between {sr_dir} and {gt_dir}")
    if crop_border < 0:
        raise EvalError(f"crop border must be >= 0, got {crop_border}")

    rows = []
    for name in common:
        sr = _crop(load_png(sr_dir / name), crop_border)
        gt = _crop(load_png(gt_dir / name), crop_border)
        rows.append(MetricRow(name=name, psnr_y=psnr_y(sr, gt), ssim_y=ssim_y(sr, gt)))
    return MetricReport(rows=tuple(rows))


def run_external_metric(executable, sr_dir, gt_dir) -> tuple[str, dict[str, float]]:
    """Plug-in contract for metrics this package does not bundle.

    The executable is invoked as `exe <sr_dir> <gt_dir>` and must emit CSV on
    stdout with a `name,<metric>` header followed by one row per image.
    """
    proc = subprocess.run(
        [str(executable), str(sr_dir), str(gt_dir)],
        capture_output=True,
        text=True,
        check=False,
    )
    if proc.returncode != 0:
        raise EvalError(
            f"external metric {executable} exited {proc.returncode}: {proc.stderr.strip()}"
        )
    reader = csv.reader(io.StringIO(proc.stdout))
    try:
        header = next(reader)
    except StopIteration:
        raise EvalError(f"external metric {executable} produced no output") from None
    if len(header) != 2 or header[0] != "name":
        raise EvalError(f"external metric header must be name,<metric>; got {header}")
    values = {}
    for row in reader:
        if not row:
            continue
        if len(row) != 2:
            raise EvalError(f"external metric row must have 2 fields, got {row}")
        values[row[0]] = float(row[1])
    return header[1], values
