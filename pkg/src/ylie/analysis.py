"""Spectrum inspection and amplitude/phase swap reconstructions."""

from __future__ import annotations

import numpy as np

from .autodiff.tensor import Tensor
from .colorspace import KB, KG, KR, ImageBuffer, rgb_to_yuv
from .spectral import log_spectrum_image, spectrum_swap

PLANE_NAMES = {"RGB": ("R", "G", "B"), "YUV": ("Y", "U", "V"), "Y": ("Y",), "UV": ("U", "V")}


def _chw(img: ImageBuffer) -> Tensor:
    return Tensor(np.ascontiguousarray(img.data.transpose(2, 0, 1)).astype(np.float64))


def plane_spectra(img: ImageBuffer, space: str = "RGB") -> list[tuple[str, np.ndarray, np.ndarray]]:
    """(plane name, plane scaled to [0, 1], log spectrum in [0, 1]) per channel.

    Signed chroma planes are shifted by 0.5 for display.
    """
    if space == "YUV" and img.space == "RGB":
        img = rgb_to_yuv(img)
    elif space != img.space:
        raise ValueError(f"cannot show {img.space} image as {space} planes")
    spectra = log_spectrum_image(_chw(img))
    out = []
    for c, name in enumerate(PLANE_NAMES[img.space]):
        plane = img.data[:, :, c].astype(np.float64)
        if img.space in ("YUV", "UV") and name != "Y":
            plane = plane + 0.5
        out.append((name, np.clip(plane, 0.0, 1.0), spectra[c]))
    return out


def swap_images(a: ImageBuffer, b: ImageBuffer) -> tuple[ImageBuffer, ImageBuffer]:
    """(amplitude of a with phase of b, amplitude of b with phase of a), per channel."""
    if a.data.shape != b.data.shape:
        raise ValueError(f"swap needs equal dims, got {a.data.shape} and {b.data.shape}")
    ta, tb = _chw(a), _chw(b)
    ab = spectrum_swap(ta, tb).data.transpose(1, 2, 0)
    ba = spectrum_swap(tb, ta).data.transpose(1, 2, 0)
    return ImageBuffer(np.ascontiguousarray(ab, dtype=np.float32), a.space), \
        ImageBuffer(np.ascontiguousarray(ba, dtype=np.float32), a.space)


def _luma(img: ImageBuffer) -> np.ndarray:
    x = img.data.astype(np.float64)
    if x.shape[2] == 1:
        return x[:, :, 0]
    return KR * x[:, :, 0] + KG * x[:, :, 1] + KB * x[:, :, 2]


def edge_map(img: ImageBuffer) -> np.ndarray:
    """Sobel gradient magnitude of luma (edge-replicated border)."""
    y = np.pad(_luma(img), 1, mode="edge")
    gx = (y[:-2, 2:] + 2 * y[1:-1, 2:] + y[2:, 2:]) - (y[:-2, :-2] + 2 * y[1:-1, :-2] + y[2:, :-2])
    gy = (y[2:, :-2] + 2 * y[2:, 1:-1] + y[2:, 2:]) - (y[:-2, :-2] + 2 * y[:-2, 1:-1] + y[:-2, 2:])
    return np.hypot(gx, gy)


def correlation(a: np.ndarray, b: np.ndarray) -> float:
    """Pearson correlation; 0 if either input is constant."""
    x = a.ravel() - a.mean()
    y = b.ravel() - b.mean()
    den = np.sqrt((x @ x) * (y @ y))
    return float(x @ y / den) if den > 0 else 0.0


def swap_report(a: ImageBuffer, b: ImageBuffer) -> dict:
    """Edge correlations of each swap reconstruction with its two donors."""
    ab, ba = swap_images(a, b)
    ea, eb = edge_map(a), edge_map(b)
    e_ab, e_ba = edge_map(ab), edge_map(ba)
    return {
        "amp0_phase1": {"corr_phase_donor": correlation(e_ab, eb), "corr_amp_donor": correlation(e_ab, ea)},
        "amp1_phase0": {"corr_phase_donor": correlation(e_ba, ea), "corr_amp_donor": correlation(e_ba, eb)},
    }


def feature_spectrum(feat: np.ndarray) -> np.ndarray:
    """Channel-averaged amplitude of an (N, C, H, W) feature map, as a log
    spectrum image for the first batch item."""
    return log_spectrum_image(Tensor(feat[0].astype(np.float64)))[...].mean(axis=0)
