"""Photometric loss, Sobel edge-coincidence penalty and the weighted total."""

from __future__ import annotations

import numpy as np

SOBEL_X = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])
SOBEL_Y = SOBEL_X.T.copy()
EDGE_WEIGHT = 0.5


class PatchTooSmall(ValueError):
    pass


def _as_hwc(img) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        img = img[..., None]
    if img.shape[0] < 3 or img.shape[1] < 3:
        raise PatchTooSmall(f"patch {img.shape[:2]} is smaller than 3x3")
    return img


def _sobel_x(img: np.ndarray) -> np.ndarray:
    # central difference first, then [1, 2, 1] smoothing: exact zero on flat input
    d = img[:, 2:] - img[:, :-2]
    return d[:-2] + 2.0 * d[1:-1] + d[2:]


def _sobel_y(img: np.ndarray) -> np.ndarray:
    d = img[2:] - img[:-2]
    return d[:, :-2] + 2.0 * d[:, 1:-1] + d[:, 2:]


def _correlate_adjoint(grad: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    h, w = grad.shape[0] + 2, grad.shape[1] + 2
    out = np.zeros((h, w) + grad.shape[2:])
    for dy in range(3):
        for dx in range(3):
            if kernel[dy, dx]:
                out[dy:dy + h - 2, dx:dx + w - 2] += kernel[dy, dx] * grad
    return out


def sobel_gradients(patch) -> np.ndarray:
    """``|Gx * patch| + |Gy * patch|`` on interior pixels, per channel."""
    img = _as_hwc(patch)
    mag = np.abs(_sobel_x(img)) + np.abs(_sobel_y(img))
    return mag if np.ndim(patch) == 3 else mag[..., 0]


def stencil_mask(valid) -> np.ndarray:
    """Interior pixels whose whole 3x3 neighbourhood is ``valid`` (H, W) -> (H-2, W-2)."""
    v = np.asarray(valid, dtype=bool)
    h, w = v.shape
    if h < 3 or w < 3:
        raise PatchTooSmall(f"patch {h}x{w} is smaller than the 3x3 Sobel stencil")
    out = np.ones((h - 2, w - 2), dtype=bool)
    for a in range(3):
        for b in range(3):
            out &= v[a:a + h - 2, b:b + w - 2]
    return out


def edge_loss(primary_patch, reflected_patch, with_grad: bool = False, mask=None):
    """Mean over interior pixels/channels of ``|grad primary| * |grad reflected|``.

    The reflected patch is a constant here: the returned gradient (when
    ``with_grad``) is with respect to the primary patch only.  ``mask`` (shape
    of the interior) zeroes the reflected response where it is undefined.
    """
    prim = _as_hwc(primary_patch)
    refl = _as_hwc(reflected_patch)
    if prim.shape != refl.shape:
        raise ValueError(f"patch shapes differ: {prim.shape} vs {refl.shape}")
    gx = _sobel_x(prim)
    gy = _sobel_y(prim)
    ref_mag = np.abs(_sobel_x(refl)) + np.abs(_sobel_y(refl))
    if mask is not None:
        ref_mag = ref_mag * np.asarray(mask, dtype=np.float64).reshape(ref_mag.shape[:2] + (1,) * (ref_mag.ndim - 2))
    n = ref_mag.size
    loss = float(np.sum((np.abs(gx) + np.abs(gy)) * ref_mag) / n)
    if not with_grad:
        return loss
    coef = ref_mag / n
    grad = _correlate_adjoint(np.sign(gx) * coef, SOBEL_X) + _correlate_adjoint(np.sign(gy) * coef, SOBEL_Y)
    return loss, grad.reshape(np.shape(primary_patch))


def photometric_loss(composite, gt, with_grad: bool = False):
    """Squared error averaged over rays and channels."""
    c = np.asarray(composite, dtype=np.float64)
    g = np.asarray(gt, dtype=np.float64)
    if c.shape != g.shape:
        raise ValueError(f"batch shapes differ: {c.shape} vs {g.shape}")
    diff = c - g
    loss = float(np.mean(diff * diff))
    if not with_grad:
        return loss
    return loss, 2.0 * diff / diff.size


def total_loss(photo: float, edge: float, edge_weight: float) -> float:
    if edge_weight < 0:
        raise ValueError("edge weight must be non-negative")
    return photo + edge_weight * edge
