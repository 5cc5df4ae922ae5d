"""DSGLA (luma branch), LAFA (chroma branch) and GI (fusion) blocks."""

from __future__ import annotations

import math

from ..autodiff import ops
from ..autodiff.tensor import Tensor, scope
from ..spectral import fft2_polar, ifft2_polar
from .config import ModelConfig
from .params import ModelParams


def conv(p: ModelParams, name: str, x: Tensor, pad=0, dilation: int = 1, groups: int = 1) -> Tensor:
    with scope(name):
        return ops.conv2d(x, p[f"{name}.w"], p[f"{name}.b"], pad=pad, dilation=dilation, groups=groups)


def depthwise(p: ModelParams, name: str, x: Tensor, dilation: int = 1) -> Tensor:
    k = p[f"{name}.w"].shape[-1]
    return conv(p, name, x, pad=dilation * (k // 2), dilation=dilation, groups=x.shape[1])


def _to_tokens(x: Tensor, heads: int) -> Tensor:
    """(N, heads*d, H, W) -> (N*heads, H*W, d)."""
    N, C, H, W = x.shape
    d = C // heads
    t = ops.reshape(x, (N, heads, d, H * W))
    t = ops.permute(t, (0, 1, 3, 2))
    return ops.reshape(t, (N * heads, H * W, d))


def _from_tokens(t: Tensor, n: int, h: int, w: int) -> Tensor:
    B, T, d = t.shape
    heads = B // n
    x = ops.reshape(t, (n, heads, T, d))
    x = ops.permute(x, (0, 1, 3, 2))
    return ops.reshape(x, (n, heads * d, h, w))


def attention(q: Tensor, k: Tensor, v: Tensor) -> Tensor:
    """softmax(q k^T / sqrt(d)) v over (B, T, d) tokens."""
    d = q.shape[-1]
    scores = ops.matmul(ops.mul(q, 1.0 / math.sqrt(d)), ops.permute(k, (0, 2, 1)))
    return ops.matmul(ops.softmax_lastdim(scores), v)


# ---------------------------------------------------------------------------
# DSGLA

def ddsa(p: ModelParams, cfg: ModelConfig, x_gl: Tensor) -> Tensor:
    with scope("ddsa"):
        N, _, H, W = x_gl.shape
        qkv = conv(p, "dsgla.ddsa.qkv", x_gl)
        qkv = depthwise(p, "dsgla.ddsa.dw", qkv, dilation=cfg.ddsa_dilation)
        q, k, v = ops.split_channels(qkv, 3)
        with scope("attention"):
            out = attention(_to_tokens(q, cfg.heads), _to_tokens(k, cfg.heads), _to_tokens(v, cfg.heads))
        return conv(p, "dsgla.ddsa.proj", _from_tokens(out, N, H, W))


def gga(p: ModelParams, cfg: ModelConfig, x_lo: Tensor) -> Tensor:
    with scope("gga"):
        base = conv(p, "dsgla.gga.base", x_lo)
        ghost = ops.concat_channels([base, depthwise(p, "dsgla.gga.cheap", base)])
        with scope("gate"):
            s = ops.avg_pool(x_lo, cfg.gga_pool)
            s = conv(p, "dsgla.gga.short_h", s, pad=(0, 2), groups=cfg.short_groups)
            s = conv(p, "dsgla.gga.short_v", s, pad=(2, 0), groups=cfg.short_groups)
            gate = ops.sigmoid(ops.upsample_bilinear(s, cfg.gga_pool))
            return ops.mul(ghost, gate)


def dsgla_forward(p: ModelParams, cfg: ModelConfig, x: Tensor) -> Tensor:
    """Pooled global/local split over Y features, residual at full size."""
    C, H, W = x.shape[1:]
    if C != cfg.feat_y:
        raise ValueError(f"dsgla expects {cfg.feat_y} channels, got {C}")
    r = cfg.pool_ratio
    if H % (r * cfg.gga_pool) or W % (r * cfg.gga_pool):
        raise ValueError(f"dsgla: {H}x{W} not divisible by pool_ratio*gga_pool={r * cfg.gga_pool}")
    with scope("dsgla"):
        pooled = conv(p, "dsgla.expand", ops.max_pool(x, r))
        x_gl, x_lo = ops.split_channels(pooled, 2)
        fused = ops.concat_channels([ddsa(p, cfg, x_gl), gga(p, cfg, x_lo)])
        fused = conv(p, "dsgla.fuse", fused)
        return ops.add(ops.upsample_bilinear(fused, r), x)


# ---------------------------------------------------------------------------
# LAFA

def lafa_forward(p: ModelParams, cfg: ModelConfig, uv_feat: Tensor, y_feat: Tensor) -> Tensor:
    """Y-guided frequency channel attention with learnable spectrum masks."""
    with scope("lafa"):
        s = ops.add(uv_feat, conv(p, "lafa.guide", y_feat))
        H, W = s.shape[2:]
        with scope("fca"):
            amp, phase = fft2_polar(s)
            # pooled amplitude is rescaled to orthonormal units so the MLP
            # input does not grow with image size
            stats = ops.concat_channels([ops.mul(ops.global_avg_pool(amp), 1.0 / math.sqrt(H * W)),
                                         ops.global_avg_pool(phase)])
            hidden = ops.relu(conv(p, "lafa.fc1", stats))
            weight = ops.sigmoid(conv(p, "lafa.fc2", hidden))
        with scope("mask"):
            amp_m = ops.mul(amp, p["lafa.mask_amp"])
            phase_m = ops.wrap_phase(ops.mul(phase, p["lafa.mask_phase"]))
            x_rec = ifft2_polar(amp_m, phase_m)
        local = depthwise(p, "lafa.dw", s)
        with scope("combine"):
            return ops.add(ops.mul(ops.mul(x_rec, weight), local), s)


# ---------------------------------------------------------------------------
# GI

def _multiscale(p: ModelParams, cfg: ModelConfig, branch: str, x: Tensor) -> Tensor:
    maps = [depthwise(p, f"gi.hf_{branch}.k{k}", x) for k in cfg.hf_kernels]
    return conv(p, f"gi.hf_{branch}.fuse", ops.concat_channels(maps))


def cgm_global(p: ModelParams, cfg: ModelConfig, y_feat: Tensor, uv_feat: Tensor) -> Tensor:
    """Cross attention: pooled Y queries attend to pooled UV keys/values."""
    with scope("cgm_global"):
        r = cfg.gi_pool
        yq = ops.avg_pool(y_feat, r)
        uvp = ops.avg_pool(uv_feat, r)
        N, _, h, w = yq.shape
        q = conv(p, "gi.q", yq)
        k, v = ops.split_channels(conv(p, "gi.kv", uvp), 2)
        with scope("attention"):
            heads = cfg.gi_heads
            out = attention(_to_tokens(q, heads), _to_tokens(k, heads), _to_tokens(v, heads))
        out = conv(p, "gi.proj", _from_tokens(out, N, h, w))
        return ops.upsample_bilinear(out, r)


def lsa(p: ModelParams, cfg: ModelConfig, fused: Tensor, uv_high: Tensor) -> Tensor:
    """Strip attention: per-row tanh weights over k vertically shifted rows of
    the UV high-frequency map, scaled by that map."""
    with scope("lsa"):
        k = cfg.lsa_k
        r = k // 2
        rows = ops.mean_axis(fused, 3)                       # (N, C, H, 1)
        weights = ops.tanh(conv(p, "gi.lsa", rows))          # (N, k*C, H, 1)
        per_offset = ops.split_channels(weights, k)
        H = uv_high.shape[2]
        padded = ops.pad2d(uv_high, (r, r, 0, 0), "zero")
        acc = None
        for i in range(k):
            strip = ops.crop(padded, i, 0, H, uv_high.shape[3])
            term = ops.mul(strip, per_offset[i])
            acc = term if acc is None else ops.add(acc, term)
        return ops.mul(uv_high, acc)


def fusion_align(p: ModelParams, f_yuv: Tensor) -> Tensor:
    with scope("fa"):
        refined = ops.gelu(depthwise(p, "gi.fa.dw", conv(p, "gi.fa.conv1", f_yuv)))
        offset = ops.sub(refined, ops.gelu(conv(p, "gi.fa.conv2", refined)))
        return ops.add(refined, ops.mul(offset, p["gi.fa.gamma"]))


def gi_forward(p: ModelParams, cfg: ModelConfig, y_feat: Tensor, uv_feat: Tensor) -> Tensor:
    if y_feat.shape[2:] != uv_feat.shape[2:]:
        raise ValueError(f"gi: spatial dims differ, {y_feat.shape} vs {uv_feat.shape}")
    with scope("gi"):
        f_global = cgm_global(p, cfg, y_feat, uv_feat)
        with scope("cgm_local"):
            y_high = _multiscale(p, cfg, "y", y_feat)
            uv_high = _multiscale(p, cfg, "uv", uv_feat)
            f_local = lsa(p, cfg, ops.mul(y_high, uv_high), uv_high)
        return fusion_align(p, ops.add(f_global, f_local))
