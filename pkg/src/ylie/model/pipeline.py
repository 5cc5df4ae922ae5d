"""End-to-end enhancement: RGB -> YUV -> (DSGLA | LAFA) -> GI -> RGB."""

from __future__ import annotations

import numpy as np

from ..autodiff import ops
from ..autodiff.tensor import Tensor, scope
from ..colorspace import ImageBuffer, rgb_to_yuv_tensor, yuv_to_rgb_tensor
from .blocks import conv, dsgla_forward, gi_forward, lafa_forward
from .config import ModelConfig
from .params import ModelParams

MIN_SIZE = 16


FEATURES = ("y_embed", "dsgla", "uv_embed", "lafa", "gi")


def network_yuv(p: ModelParams, cfg: ModelConfig, yuv: Tensor, capture: dict | None = None) -> Tensor:
    """The network body on a YUV tensor whose dims are multiples of
    ``cfg.size_multiple``; returns the enhanced YUV tensor.

    If ``capture`` is given, the intermediate feature maps named in
    ``FEATURES`` are stored in it.
    """
    y, u, v = ops.split_channels(yuv, 3)
    uv = ops.concat_channels([u, v])
    y_in = conv(p, "y_embed", y, pad=1)
    y_feat = dsgla_forward(p, cfg, y_in)
    y_enh = ops.add(y, conv(p, "y_head", y_feat, pad=1))
    uv_in = conv(p, "uv_embed", uv, pad=1)
    uv_feat = lafa_forward(p, cfg, uv_in, y_feat)
    uv_enh = ops.add(uv, conv(p, "uv_head", uv_feat, pad=1))
    fused = gi_forward(p, cfg, y_feat, uv_feat)
    if capture is not None:
        capture.update(zip(FEATURES, (y_in, y_feat, uv_in, uv_feat, fused)))
    with scope("merge"):
        return ops.add(ops.concat_channels([y_enh, uv_enh]), conv(p, "out_head", fused, pad=1))


def padded_size(cfg: ModelConfig, h: int, w: int) -> tuple[int, int]:
    m = cfg.size_multiple
    return -(-h // m) * m, -(-w // m) * m


def enhance_tensor(p: ModelParams, cfg: ModelConfig, rgb: Tensor, clamp: bool = True,
                   capture: dict | None = None) -> Tensor:
    """Enhance an (N, 3, H, W) RGB tensor; differentiable end to end.

    Inputs are reflect-padded at the bottom/right to the size the body needs
    and cropped back afterwards.
    """
    if rgb.ndim != 4 or rgb.shape[1] != 3:
        raise ValueError(f"expected (N, 3, H, W) RGB, got {rgb.shape}")
    H, W = rgb.shape[2:]
    if H < MIN_SIZE or W < MIN_SIZE:
        raise ValueError(f"image {H}x{W} is smaller than the {MIN_SIZE}x{MIN_SIZE} minimum")
    dtype = next(iter(p.values())).dtype
    if rgb.dtype != dtype:
        rgb = Tensor(rgb.data.astype(dtype)) if not _tracked(rgb) else rgb
    Hp, Wp = padded_size(cfg, H, W)
    x = rgb if (Hp, Wp) == (H, W) else ops.pad2d(rgb, (0, Hp - H, 0, Wp - W), "reflect")
    with scope("color"):
        yuv = rgb_to_yuv_tensor(x)
    out = network_yuv(p, cfg, yuv, capture)
    with scope("color"):
        out = yuv_to_rgb_tensor(out)
    if (Hp, Wp) != (H, W):
        out = ops.crop(out, 0, 0, H, W)
    return ops.clamp(out, 0.0, 1.0) if clamp else out


def _tracked(t: Tensor) -> bool:
    from ..autodiff.tensor import active_tape
    tape = active_tape()
    return tape is not None and tape.handle(t) is not None


def pipeline_forward(rgb: ImageBuffer, params: ModelParams, config: ModelConfig) -> ImageBuffer:
    if rgb.space != "RGB":
        raise ValueError(f"pipeline expects an RGB image, got {rgb.space}")
    dtype = next(iter(params.values())).dtype
    out = enhance_tensor(params, config, rgb.to_tensor(dtype))
    return ImageBuffer.from_tensor(out, "RGB")
