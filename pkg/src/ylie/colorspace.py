"""RGB <-> YUV conversion (BT.601 analog form, full range, signed chroma)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import ops
from .autodiff.tensor import Tensor

KR, KG, KB = 0.299, 0.587, 0.114
U_SCALE = 0.492111
V_SCALE = 0.877283

RGB_TO_YUV = np.array([
    [KR, KG, KB],
    [-U_SCALE * KR, -U_SCALE * KG, U_SCALE * (1.0 - KB)],
    [V_SCALE * (1.0 - KR), -V_SCALE * KG, -V_SCALE * KB],
], dtype=np.float64)
YUV_TO_RGB = np.linalg.inv(RGB_TO_YUV)

_CHANNELS = {"RGB": 3, "YUV": 3, "Y": 1, "UV": 2}


@dataclass(frozen=True)
class ImageBuffer:
    """Decoded HWC float image plus its color-space tag."""

    data: np.ndarray
    space: str

    def __post_init__(self):
        if self.space not in _CHANNELS:
            raise ValueError(f"unknown color space {self.space!r}")
        if self.data.ndim != 3:
            raise ValueError(f"image data must be HWC, got shape {self.data.shape}")
        if self.data.shape[2] != _CHANNELS[self.space]:
            raise ValueError(f"space {self.space} needs {_CHANNELS[self.space]} channels, got {self.data.shape[2]}")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    def to_tensor(self, dtype=np.float32) -> Tensor:
        """(1, C, H, W) tensor view of the image."""
        return Tensor(self.data.transpose(2, 0, 1)[None].astype(dtype))

    @classmethod
    def from_tensor(cls, t: Tensor | np.ndarray, space: str) -> "ImageBuffer":
        arr = t.data if isinstance(t, Tensor) else np.asarray(t)
        if arr.ndim == 4:
            if arr.shape[0] != 1:
                raise ValueError(f"expected a single image, got batch of {arr.shape[0]}")
            arr = arr[0]
        return cls(np.ascontiguousarray(arr.transpose(1, 2, 0)), space)


def _require(img: ImageBuffer, space: str) -> None:
    if img.space != space:
        raise ValueError(f"expected a {space} image, got {img.space}")


def rgb_to_yuv(img: ImageBuffer) -> ImageBuffer:
    _require(img, "RGB")
    return ImageBuffer(np.einsum("ij,hwj->hwi", RGB_TO_YUV, img.data.astype(np.float64)).astype(img.data.dtype), "YUV")


def yuv_to_rgb(img: ImageBuffer, clamp: bool = True) -> ImageBuffer:
    _require(img, "YUV")
    rgb = np.einsum("ij,hwj->hwi", YUV_TO_RGB, img.data.astype(np.float64))
    if clamp:
        rgb = np.clip(rgb, 0.0, 1.0)
    return ImageBuffer(rgb.astype(img.data.dtype), "RGB")


def split_yuv(img: ImageBuffer) -> tuple[ImageBuffer, ImageBuffer]:
    _require(img, "YUV")
    return ImageBuffer(img.data[:, :, :1].copy(), "Y"), ImageBuffer(img.data[:, :, 1:].copy(), "UV")


def merge_yuv(y: ImageBuffer, uv: ImageBuffer) -> ImageBuffer:
    _require(y, "Y")
    _require(uv, "UV")
    if y.data.shape[:2] != uv.data.shape[:2]:
        raise ValueError(f"merge_yuv: Y is {y.data.shape[:2]}, UV is {uv.data.shape[:2]}")
    return ImageBuffer(np.concatenate([y.data, uv.data], axis=2), "YUV")


def _matrix_conv(x: Tensor, m: np.ndarray) -> Tensor:
    if x.ndim != 4 or x.shape[1] != 3:
        raise ValueError(f"color conversion expects (N, 3, H, W), got {x.shape}")
    w = Tensor(m.reshape(3, 3, 1, 1).astype(x.dtype))
    return ops.conv2d(x, w)


def rgb_to_yuv_tensor(x: Tensor) -> Tensor:
    """Differentiable RGB -> YUV on an NCHW tensor."""
    return _matrix_conv(x, RGB_TO_YUV)


def yuv_to_rgb_tensor(x: Tensor) -> Tensor:
    """Differentiable YUV -> RGB on an NCHW tensor (unclamped)."""
    return _matrix_conv(x, YUV_TO_RGB)
