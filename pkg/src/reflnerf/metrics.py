"""Image-quality and geometry metrics plus the CSV evaluation report."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .field import VoxelRadianceField, softplus

PSNR_CAP = 99.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2
GHOST_LATTICE = 16


class ShapeMismatch(ValueError):
    pass


class TooSmall(ValueError):
    pass


class EmptyMask(ValueError):
    pass


class InvalidRegion(ValueError):
    pass


def _prepare(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeMismatch(f"{a.shape} vs {b.shape}")
    if not (np.isfinite(a).all() and np.isfinite(b).all()):
        raise ValueError("images must be finite")
    return np.clip(a, 0.0, 1.0), np.clip(b, 0.0, 1.0)


def psnr(a, b) -> float:
    """``10 log10(1 / MSE)`` over all pixels and channels, capped at 99 dB."""
    a, b = _prepare(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(1.0 / mse))


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2
    g = np.exp(-0.5 * (x / sigma) ** 2)
    return g / g.sum()


def _filter_valid(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Separable 'valid' correlation along the first two axes."""
    k = len(g)
    h, w = img.shape[:2]
    rows = sum(g[i] * img[i:i + h - k + 1] for i in range(k))
    return sum(g[i] * rows[:, i:i + w - k + 1] for i in range(k))


def ssim(a, b) -> float:
    """Mean SSIM with an 11x11 Gaussian window (sigma 1.5), per channel then averaged."""
    a, b = _prepare(a, b)
    if min(a.shape[:2]) < SSIM_WINDOW:
        raise TooSmall(f"image {a.shape[:2]} smaller than the {SSIM_WINDOW}px window")
    if a.ndim == 2:
        a, b = a[..., None], b[..., None]
    g = gaussian_window()
    mu_a, mu_b = _filter_valid(a, g), _filter_valid(b, g)
    var_a = _filter_valid(a * a, g) - mu_a ** 2
    var_b = _filter_valid(b * b, g) - mu_b ** 2
    cov = _filter_valid(a * b, g) - mu_a * mu_b
    num = (2 * mu_a * mu_b + SSIM_C1) * (2 * cov + SSIM_C2)
    den = (mu_a ** 2 + mu_b ** 2 + SSIM_C1) * (var_a + var_b + SSIM_C2)
    per_channel = np.mean(num / den, axis=(0, 1))
    return float(np.mean(per_channel))


def depth_error(pred, gt, mask=None) -> tuple[float, float]:
    """(mean, lower-median) absolute depth difference over ``mask``."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ShapeMismatch(f"{pred.shape} vs {gt.shape}")
    mask = np.isfinite(gt) & np.isfinite(pred) if mask is None else np.asarray(mask, dtype=bool)
    if not mask.any():
        raise EmptyMask("depth mask selects no pixels")
    err = np.sort(np.abs(pred[mask] - gt[mask]))
    return float(np.mean(err)), float(err[(len(err) - 1) // 2])


def region_lattice(lo, hi, n: int = GHOST_LATTICE) -> np.ndarray:
    lo, hi = np.asarray(lo, dtype=np.float64), np.asarray(hi, dtype=np.float64)
    axes = [lo[i] + (np.arange(n) + 0.5) / n * (hi[i] - lo[i]) for i in range(3)]
    return np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, 3)


def mean_density(field: VoxelRadianceField, lo, hi, n: int = GHOST_LATTICE) -> float:
    lo, hi = np.asarray(lo, dtype=np.float64), np.asarray(hi, dtype=np.float64)
    if not np.all(hi > lo):
        raise InvalidRegion(f"empty region {lo} .. {hi}")
    if np.any(lo < field.bbox_min - 1e-9) or np.any(hi > field.bbox_max + 1e-9):
        raise InvalidRegion(f"region {lo} .. {hi} leaves the grid bounds")
    lk = field.lookup(region_lattice(lo, hi, n))
    return float(np.mean(softplus(lk.raw[:, 0])))


def ghost_density_score(field: VoxelRadianceField, ghost_region, reference_region,
                        n: int = GHOST_LATTICE) -> float:
    """Mean activated density in the mirrored region over that of the real object."""
    ghost = mean_density(field, *ghost_region, n=n)
    ref = mean_density(field, *reference_region, n=n)
    if ref <= 0.0:
        raise InvalidRegion("reference region holds no density")
    return ghost / ref


# --- report ------------------------------------------------------------------

REPORT_FIELDS = ("split", "view", "psnr", "ssim", "depth_mae", "ghost_ratio", "lpips")


@dataclass
class EvalRow:
    split: str
    view: str
    psnr: float
    ssim: float
    depth_mae: float
    ghost_ratio: float

    def as_dict(self) -> dict:
        return {"split": self.split, "view": self.view, "psnr": f"{self.psnr:.6f}",
                "ssim": f"{self.ssim:.6f}", "depth_mae": f"{self.depth_mae:.6f}",
                "ghost_ratio": f"{self.ghost_ratio:.6f}", "lpips": "n/a"}


def summarize(rows: list[EvalRow]) -> list[EvalRow]:
    """Per-view rows followed by one mean row per split (view ``mean``)."""
    out = list(rows)
    for split in dict.fromkeys(r.split for r in rows):
        sel = [r for r in rows if r.split == split]
        out.append(EvalRow(split, "mean", *(float(np.mean([getattr(r, k) for r in sel]))
                                            for k in ("psnr", "ssim", "depth_mae", "ghost_ratio"))))
    return out


def report_csv(rows: list[EvalRow]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=REPORT_FIELDS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow(r.as_dict())
    return buf.getvalue()


def read_report(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
