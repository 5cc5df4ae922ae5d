"""2D Fourier transforms, polar (amplitude/phase) decomposition and the
amplitude/phase swap experiment.

Convention: the forward transform is unnormalized, the inverse carries
1/(H*W). Power-of-two lengths use a four-step transform built from length-16
DFT matmuls; any other length goes through Bluestein's chirp-z algorithm
on a power-of-two grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .autodiff import ops
from .autodiff.tensor import Tensor, add_flops, make_output

NORM_TAG = "unnormalized-forward"
PHASE_EPS = 1e-8
ZERO_AMP_RTOL = 1e-12


# ---------------------------------------------------------------------------
# 1D kernels along the last axis (complex128)

def _is_pow2(n: int) -> bool:
    return n > 0 and n & (n - 1) == 0


_BASE = 16


@lru_cache(maxsize=None)
def _dft_matrix(n: int) -> np.ndarray:
    k = np.arange(n)
    m = np.exp(-2j * np.pi * (np.outer(k, k) % n) / n)
    # exact zeros at the quarter turns keep self-conjugate bins exactly real
    m.real[np.abs(m.real) < 1e-15] = 0.0
    m.imag[np.abs(m.imag) < 1e-15] = 0.0
    m.flags.writeable = False
    return m


@lru_cache(maxsize=None)
def _twiddle(n1: int, n2: int) -> np.ndarray:
    n = n1 * n2
    t = np.exp(-2j * np.pi * (np.outer(np.arange(n1), np.arange(n2)) % n) / n)
    t.flags.writeable = False
    return t


def _fft_pow2(x: np.ndarray) -> np.ndarray:
    """Four-step Cooley-Tukey: n = 16 * m, length-16 DFTs as matmuls, then
    recurse on m after the twiddle multiply."""
    n = x.shape[-1]
    if n <= _BASE:
        return x @ _dft_matrix(n)
    n1, n2 = _BASE, n // _BASE
    y = np.matmul(_dft_matrix(n1), x.reshape(*x.shape[:-1], n1, n2))
    y *= _twiddle(n1, n2)
    return _fft_pow2(y).swapaxes(-1, -2).reshape(x.shape)


def _fft_bluestein(x: np.ndarray) -> np.ndarray:
    n = x.shape[-1]
    k = np.arange(n)
    # reduce k^2 mod 2n before scaling to keep the chirp phase accurate
    chirp = np.exp(-1j * np.pi * (k * k % (2 * n)) / n)
    m = 1 << (2 * n - 1).bit_length()
    a = np.zeros(x.shape[:-1] + (m,), dtype=np.complex128)
    a[..., :n] = x * chirp
    b = np.zeros(m, dtype=np.complex128)
    b[:n] = np.conj(chirp)
    b[m - n + 1:] = np.conj(chirp[1:])[::-1]
    conv = _ifft_1d(_fft_pow2(a) * _fft_pow2(b))
    return conv[..., :n] * chirp


def _fft_1d(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.complex128)
    if _is_pow2(x.shape[-1]):
        return _fft_pow2(x)
    return _fft_bluestein(x)


def _ifft_1d(x: np.ndarray) -> np.ndarray:
    n = x.shape[-1]
    return np.conj(_fft_1d(np.conj(x))) / n


def fft2_complex(x: np.ndarray) -> np.ndarray:
    """Unnormalized 2D DFT over the last two axes."""
    y = _fft_1d(x)
    return np.swapaxes(_fft_1d(np.swapaxes(y, -1, -2)), -1, -2)


def ifft2_complex(z: np.ndarray) -> np.ndarray:
    """Inverse of :func:`fft2_complex` (includes the 1/(H*W) factor)."""
    y = _ifft_1d(np.asarray(z, dtype=np.complex128))
    return np.swapaxes(_ifft_1d(np.swapaxes(y, -1, -2)), -1, -2)


def _polar(z: np.ndarray, dtype) -> tuple[np.ndarray, np.ndarray]:
    amp = np.abs(z)
    phase = np.arctan2(z.imag, z.real)
    # bins at round-off level count as zero amplitude
    floor = ZERO_AMP_RTOL * amp.max(axis=(-2, -1), keepdims=True) if amp.size else 0.0
    phase[amp <= floor] = 0.0
    # round-off can leave a real negative bin just above -pi
    phase[phase <= -np.pi + 1e-9] = np.pi
    return amp.astype(dtype), phase.astype(dtype)


def _count_fft(shape: tuple[int, ...]) -> None:
    H, W = shape[-2:]
    planes = int(np.prod(shape[:-2])) if len(shape) > 2 else 1
    hw = H * W
    add_flops("fft", 5 * hw * math.log2(hw) * planes if hw > 1 else 0)


# ---------------------------------------------------------------------------
# Spectrum value type

@dataclass(frozen=True)
class Spectrum:
    amplitude: np.ndarray
    phase: np.ndarray
    norm: str = NORM_TAG

    def __post_init__(self):
        if self.amplitude.shape != self.phase.shape:
            raise ValueError(f"amplitude {self.amplitude.shape} and phase {self.phase.shape} differ")

    @property
    def shape(self) -> tuple[int, ...]:
        return self.amplitude.shape

    def complex(self) -> np.ndarray:
        return self.amplitude.astype(np.float64) * np.exp(1j * self.phase.astype(np.float64))


def fft2(x: Tensor | np.ndarray) -> Spectrum:
    data = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
    amp, phase = _polar(fft2_complex(data), data.dtype)
    return Spectrum(amp, phase)


def ifft2(s: Spectrum, return_residue: bool = False):
    """Real part of the inverse transform; optionally also the discarded
    imaginary residue (max-abs)."""
    z = ifft2_complex(s.complex())
    out = Tensor(z.real.astype(s.amplitude.dtype))
    if return_residue:
        return out, float(np.max(np.abs(z.imag))) if z.size else 0.0
    return out


# ---------------------------------------------------------------------------
# Differentiable polar transforms used inside the model

def fft2_polar(x: Tensor) -> tuple[Tensor, Tensor]:
    """Amplitude and phase of the 2D DFT of real ``x``, both on the tape.

    The phase gradient divides by (|Z| + eps)^2 so it stays finite where
    the amplitude vanishes.
    """
    z = fft2_complex(x.data)
    amp_d, phase_d = _polar(z, x.dtype)
    _count_fft(x.shape)
    amp64 = np.abs(z)
    n = z.shape[-1] * z.shape[-2]
    safe = np.where(amp64 > 0, amp64, 1.0)
    unit = np.where(amp64 > 0, z / safe, 0.0)

    def back_amp(g):
        G = g.astype(np.float64) * unit
        return ((ifft2_complex(G) * n).real.astype(x.dtype),)

    def back_phase(g):
        G = g.astype(np.float64) * 1j * z / (amp64 + PHASE_EPS) ** 2
        return ((ifft2_complex(G) * n).real.astype(x.dtype),)

    amp = make_output("fft2_amp", amp_d, (x,), back_amp)
    phase = make_output("fft2_phase", phase_d, (x,), back_phase)
    return amp, phase


def ifft2_polar(amp: Tensor, phase: Tensor) -> Tensor:
    """Real part of the inverse DFT of amp * exp(i * phase)."""
    if amp.shape != phase.shape:
        raise ValueError(f"ifft2_polar: amplitude {amp.shape} vs phase {phase.shape}")
    rot = np.exp(1j * phase.data.astype(np.float64))
    zp = amp.data.astype(np.float64) * rot
    out = ifft2_complex(zp).real.astype(amp.dtype)
    _count_fft(amp.shape)
    n = amp.shape[-1] * amp.shape[-2]

    def backward(g):
        Gc = np.conj(fft2_complex(g.astype(np.float64)) / n)
        g_amp = (Gc * rot).real.astype(amp.dtype)
        g_phase = (-(Gc * zp).imag).astype(phase.dtype)
        return g_amp, g_phase

    return make_output("ifft2_polar", out, (amp, phase), backward)


# ---------------------------------------------------------------------------
# Analysis helpers

def spectrum_swap(amp_source: Tensor, phase_source: Tensor, clamp: bool = True) -> Tensor:
    """Image with the amplitude spectrum of one input and the phase of the
    other (per channel)."""
    if amp_source.shape != phase_source.shape:
        raise ValueError(f"spectrum_swap: shapes {amp_source.shape} and {phase_source.shape} differ")
    a, p = fft2(amp_source), fft2(phase_source)
    out = ifft2(Spectrum(a.amplitude, p.phase))
    return ops.clamp(out, 0.0, 1.0) if clamp else out


def fftshift2(a: np.ndarray) -> np.ndarray:
    H, W = a.shape[-2:]
    return np.roll(a, (H // 2, W // 2), axis=(-2, -1))


def log_spectrum_image(x: Tensor | np.ndarray) -> np.ndarray:
    """log(1 + amplitude), DC moved to the center, min-max scaled per plane."""
    s = fft2(x)
    img = fftshift2(np.log1p(s.amplitude.astype(np.float64)))
    lo = img.min(axis=(-2, -1), keepdims=True)
    hi = img.max(axis=(-2, -1), keepdims=True)
    span = np.where(hi > lo, hi - lo, 1.0)
    return np.where(hi > lo, (img - lo) / span, 0.0)

