"""Full-reference image quality: PSNR and SSIM."""

from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .colorspace import KB, KG, KR, ImageBuffer

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _array(x) -> np.ndarray:
    return (x.data if isinstance(x, ImageBuffer) else np.asarray(x)).astype(np.float64)


def _same_dims(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ValueError(f"image dims differ: {a.shape} vs {b.shape}")


def psnr(a, b, peak: float = 1.0) -> float:
    """PSNR in dB over all values jointly; identical inputs give ``inf``."""
    x, y = _array(a), _array(b)
    _same_dims(x, y)
    mse = float(np.mean((x - y) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    t = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-t * t / (2.0 * sigma * sigma))
    return g / g.sum()


def _filter_valid(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    rows = sliding_window_view(img, g.size, axis=0) @ g
    return sliding_window_view(rows, g.size, axis=1) @ g


def _ssim_plane(x: np.ndarray, y: np.ndarray, g: np.ndarray, peak: float) -> float:
    c1, c2 = (SSIM_K1 * peak) ** 2, (SSIM_K2 * peak) ** 2
    mx, my = _filter_valid(x, g), _filter_valid(y, g)
    sxx = _filter_valid(x * x, g) - mx * mx
    syy = _filter_valid(y * y, g) - my * my
    sxy = _filter_valid(x * y, g) - mx * my
    num = (2 * mx * my + c1) * (2 * sxy + c2)
    den = (mx * mx + my * my + c1) * (sxx + syy + c2)
    return float(np.mean(num / den))


def _planes(x: np.ndarray, per_channel: bool) -> list[np.ndarray]:
    if x.ndim == 2:
        return [x]
    if x.shape[2] == 1 or per_channel:
        return [x[:, :, c] for c in range(x.shape[2])]
    if x.shape[2] != 3:
        raise ValueError(f"ssim on luma expects 1 or 3 channels, got {x.shape[2]}")
    return [KR * x[:, :, 0] + KG * x[:, :, 1] + KB * x[:, :, 2]]


def ssim(a, b, per_channel: bool = False, peak: float = 1.0) -> float:
    """Mean SSIM (11x11 Gaussian window, valid region only).

    RGB inputs are scored on luma unless ``per_channel`` is set, in which
    case the per-channel scores are averaged.
    """
    x, y = _array(a), _array(b)
    _same_dims(x, y)
    if min(x.shape[0], x.shape[1]) < SSIM_WINDOW:
        raise ValueError(f"image {x.shape[0]}x{x.shape[1]} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    g = gaussian_window()
    scores = [_ssim_plane(p, q, g, peak) for p, q in zip(_planes(x, per_channel), _planes(y, per_channel))]
    return float(np.mean(scores))
