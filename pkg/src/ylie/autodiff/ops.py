"""Differentiable operations on :class:`Tensor`.

Convolutions, matmuls and reductions accumulate in float64 and store the
result in the input dtype. Every op reports its cost to the active FLOP
counter: convolutions and matmuls as 2 * MACs, everything elementwise as one
operation per output element, pure data movement as zero.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import erf

from .tensor import Tensor, add_flops, make_output

_ACC = np.float64
_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def _pair(v) -> tuple[int, int]:
    if isinstance(v, (tuple, list)):
        a, b = v
        return int(a), int(b)
    return int(v), int(v)


def _lift(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else np.float32
    return Tensor(np.asarray(x, dtype=dtype))


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _elementwise(n: int) -> None:
    add_flops("elementwise", n)


# ---------------------------------------------------------------------------
# Arithmetic with numpy broadcasting

def add(a, b) -> Tensor:
    a = _lift(a, b if isinstance(b, Tensor) else None)
    b = _lift(b, a)
    out = a.data + b.data
    _elementwise(out.size)
    sa, sb = a.shape, b.shape
    return make_output("add", out, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a = _lift(a, b if isinstance(b, Tensor) else None)
    b = _lift(b, a)
    out = a.data - b.data
    _elementwise(out.size)
    sa, sb = a.shape, b.shape
    return make_output("sub", out, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a = _lift(a, b if isinstance(b, Tensor) else None)
    b = _lift(b, a)
    ad, bd = a.data, b.data
    out = ad * bd
    _elementwise(out.size)

    def backward(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return make_output("mul", out, (a, b), backward)


def sum_all(x: Tensor) -> Tensor:
    xd = x.data
    out = np.asarray(xd.sum(dtype=_ACC), dtype=xd.dtype).reshape(())
    _elementwise(xd.size)
    return make_output("sum", out, (x,), lambda g: (np.broadcast_to(g, xd.shape).astype(xd.dtype),))


def mean_all(x: Tensor) -> Tensor:
    xd = x.data
    n = xd.size
    out = np.asarray(xd.mean(dtype=_ACC), dtype=xd.dtype).reshape(())
    _elementwise(n)
    return make_output("mean", out, (x,), lambda g: (np.full(xd.shape, g / n, dtype=xd.dtype),))


def mean_axis(x: Tensor, axes: int | tuple[int, ...]) -> Tensor:
    """Mean over ``axes``, keeping them as size-1 dims."""
    xd = x.data
    axes = (axes,) if isinstance(axes, int) else tuple(axes)
    n = int(np.prod([xd.shape[a] for a in axes]))
    out = xd.mean(axis=axes, keepdims=True, dtype=_ACC).astype(xd.dtype)
    _elementwise(xd.size)
    return make_output("mean_axis", out, (x,), lambda g: (np.broadcast_to(g / n, xd.shape).astype(xd.dtype),))


def log(x: Tensor) -> Tensor:
    xd = x.data
    _elementwise(xd.size)
    return make_output("log", np.log(xd), (x,), lambda g: (g / xd,))


# ---------------------------------------------------------------------------
# Activations

def relu(x: Tensor) -> Tensor:
    xd = x.data
    _elementwise(xd.size)
    return make_output("relu", np.maximum(xd, 0), (x,), lambda g: (g * (xd > 0),))


def sigmoid(x: Tensor) -> Tensor:
    xd = x.data
    # split by sign so exp never overflows
    e = np.exp(-np.abs(xd))
    y = np.where(xd >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(xd.dtype)
    _elementwise(xd.size)
    return make_output("sigmoid", y, (x,), lambda g: (g * y * (1 - y),))


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    _elementwise(y.size)
    return make_output("tanh", y, (x,), lambda g: (g * (1 - y * y),))


def gelu(x: Tensor) -> Tensor:
    """Exact GELU, x * Phi(x)."""
    xd = x.data
    cdf = 0.5 * (1.0 + erf(xd / _SQRT2))
    y = (xd * cdf).astype(xd.dtype)
    _elementwise(xd.size)

    def backward(g):
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * xd * xd)
        return ((g * (cdf + xd * pdf)).astype(xd.dtype),)

    return make_output("gelu", y, (x,), backward)


def softmax_lastdim(x: Tensor) -> Tensor:
    xd = x.data
    z = xd.astype(_ACC)
    z = np.exp(z - z.max(axis=-1, keepdims=True))
    y64 = z / z.sum(axis=-1, keepdims=True)
    y = y64.astype(xd.dtype)
    _elementwise(xd.size)

    def backward(g):
        g64 = g.astype(_ACC)
        return ((y64 * (g64 - (g64 * y64).sum(axis=-1, keepdims=True))).astype(xd.dtype),)

    return make_output("softmax", y, (x,), backward)


def clamp(x: Tensor, lo: float, hi: float) -> Tensor:
    xd = x.data
    _elementwise(xd.size)
    inside = (xd >= lo) & (xd <= hi)
    return make_output("clamp", np.clip(xd, lo, hi), (x,), lambda g: (g * inside,))


def wrap_phase(x: Tensor) -> Tensor:
    """Map angles to (-pi, pi]; gradient passes through."""
    xd = x.data
    y = (np.pi - np.mod(np.pi - xd.astype(_ACC), 2 * np.pi)).astype(xd.dtype)
    _elementwise(xd.size)
    return make_output("wrap_phase", y, (x,), lambda g: (g,))


# ---------------------------------------------------------------------------
# Convolution

def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, pad=0,
           dilation: int = 1, groups: int = 1) -> Tensor:
    """Zero-padded 2D cross-correlation.

    ``pad`` is an int or an (pad_h, pad_w) pair. Covers pointwise, depthwise
    (groups == C), dilated and grouped asymmetric kernels.
    """
    if x.ndim != 4 or w.ndim != 4:
        raise ValueError(f"conv2d expects 4D input and weight, got {x.shape} and {w.shape}")
    N, C, H, W = x.shape
    Co, Cig, kh, kw = w.shape
    if C % groups or Co % groups:
        raise ValueError(f"conv2d: channels in={C}, out={Co} not divisible by groups={groups}")
    if Cig * groups != C:
        raise ValueError(f"conv2d: weight expects {Cig * groups} input channels, input has {C}")
    if b is not None and b.shape != (Co,):
        raise ValueError(f"conv2d: bias shape {b.shape} does not match out channels {Co}")
    ph, pw = _pair(pad)
    s, d = int(stride), int(dilation)
    Ho = (H + 2 * ph - d * (kh - 1) - 1) // s + 1
    Wo = (W + 2 * pw - d * (kw - 1) - 1) // s + 1
    if Ho < 1 or Wo < 1:
        raise ValueError(f"conv2d: output spatial size {Ho}x{Wo} from input {H}x{W}, kernel {kh}x{kw}")
    G, Cog = groups, Co // groups
    Hp, Wp = H + 2 * ph, W + 2 * pw
    dtype = x.dtype

    if ph or pw:
        xp = np.zeros((N, C, Hp, Wp), dtype=_ACC)
        xp[:, :, ph:ph + H, pw:pw + W] = x.data
    else:
        xp = x.data.astype(_ACC)
    xg = xp.reshape(N, G, Cig, Hp, Wp)
    wg = w.data.astype(_ACC).reshape(G, Cog, Cig, kh, kw)
    depthwise = Cig == 1 and Cog == 1
    span_h, span_w = d * (kh - 1) + 1, d * (kw - 1) + 1

    def window(i, j):
        return (slice(None), slice(None), slice(None),
                slice(i * d, i * d + s * (Ho - 1) + 1, s),
                slice(j * d, j * d + s * (Wo - 1) + 1, s))

    if depthwise:
        taps = sliding_window_view(xp, (span_h, span_w), axis=(2, 3))[:, :, ::s, ::s, ::d, ::d]
        out = np.einsum("nchwij,cij->nchw", taps[:, :, :Ho, :Wo], wg[:, 0, 0])
    else:
        out = np.zeros((N, G, Cog, Ho, Wo), dtype=_ACC)
        for i in range(kh):
            for j in range(kw):
                xs = xg[window(i, j)]
                out += np.matmul(wg[:, :, :, i, j], xs.reshape(N, G, Cig, Ho * Wo)).reshape(N, G, Cog, Ho, Wo)
        out = out.reshape(N, Co, Ho, Wo)
    if b is not None:
        out += b.data.astype(_ACC)[None, :, None, None]
    add_flops("conv", 2 * N * Co * Ho * Wo * Cig * kh * kw)

    def backward(g):
        g64 = g.astype(_ACC)
        gw = np.zeros_like(wg)
        if depthwise:
            if s == 1:
                gpad = np.pad(g64, ((0, 0), (0, 0), (span_h - 1, span_h - 1), (span_w - 1, span_w - 1)))
                taps_g = sliding_window_view(gpad, (span_h, span_w), axis=(2, 3))[:, :, :, :, ::d, ::d]
                gxp = np.einsum("nchwij,cij->nchw", taps_g, wg[:, 0, 0, ::-1, ::-1])
            else:
                gxp = np.zeros_like(xp)
                for i in range(kh):
                    for j in range(kw):
                        gxp[window(i, j)[1:]] += wg[None, :, 0, 0, i, j, None, None] * g64
            for i in range(kh):
                for j in range(kw):
                    gw[:, 0, 0, i, j] = np.einsum("nchw,nchw->c", xp[window(i, j)[1:]], g64)
            gxp = gxp.reshape(N, C, Hp, Wp)
        else:
            g5 = g64.reshape(N, G, Cog, Ho, Wo)
            g2 = g5.reshape(N, G, Cog, Ho * Wo)
            gxg = np.zeros_like(xg)
            for i in range(kh):
                for j in range(kw):
                    win = window(i, j)
                    wt = wg[:, :, :, i, j].transpose(0, 2, 1)
                    gxg[win] += np.matmul(wt, g2).reshape(N, G, Cig, Ho, Wo)
                    xs2 = xg[win].reshape(N, G, Cig, Ho * Wo)
                    gw[:, :, :, i, j] = np.matmul(g2, xs2.transpose(0, 1, 3, 2)).sum(axis=0)
            gxp = gxg.reshape(N, C, Hp, Wp)
        gx = gxp[:, :, ph:ph + H, pw:pw + W].astype(dtype)
        gw_out = gw.reshape(Co, Cig, kh, kw).astype(w.dtype)
        gb = None if b is None else g64.sum(axis=(0, 2, 3)).astype(b.dtype)
        return gx, gw_out, gb

    return make_output("conv2d", out.astype(dtype), (x, w, b), backward)


# ---------------------------------------------------------------------------
# Pooling and resampling

def _check_divisible(x: Tensor, k: int, what: str) -> None:
    if x.ndim != 4:
        raise ValueError(f"{what} expects NCHW, got shape {x.shape}")
    H, W = x.shape[2:]
    if k < 1 or H % k or W % k:
        raise ValueError(f"{what}: spatial dims {H}x{W} not divisible by k={k}")


def max_pool(x: Tensor, k: int) -> Tensor:
    """Non-overlapping k x k max pooling (ties go to the first element)."""
    _check_divisible(x, k, "max_pool")
    N, C, H, W = x.shape
    Ho, Wo = H // k, W // k
    blocks = x.data.reshape(N, C, Ho, k, Wo, k).transpose(0, 1, 2, 4, 3, 5).reshape(N, C, Ho, Wo, k * k)
    idx = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]
    _elementwise(x.size)

    def backward(g):
        gb = np.zeros(blocks.shape, dtype=x.dtype)
        np.put_along_axis(gb, idx[..., None], g[..., None], axis=-1)
        return (gb.reshape(N, C, Ho, Wo, k, k).transpose(0, 1, 2, 4, 3, 5).reshape(N, C, H, W),)

    return make_output("max_pool", out, (x,), backward)


def avg_pool(x: Tensor, k: int) -> Tensor:
    _check_divisible(x, k, "avg_pool")
    N, C, H, W = x.shape
    Ho, Wo = H // k, W // k
    out = x.data.reshape(N, C, Ho, k, Wo, k).mean(axis=(3, 5), dtype=_ACC).astype(x.dtype)
    _elementwise(x.size)

    def backward(g):
        gx = np.broadcast_to((g / (k * k))[:, :, :, None, :, None], (N, C, Ho, k, Wo, k))
        return (gx.reshape(N, C, H, W).astype(x.dtype),)

    return make_output("avg_pool", out, (x,), backward)


def global_avg_pool(x: Tensor) -> Tensor:
    """Mean over H and W, result (N, C, 1, 1)."""
    if x.ndim != 4:
        raise ValueError(f"global_avg_pool expects NCHW, got {x.shape}")
    return mean_axis(x, (2, 3))


def bilinear_matrix(n_in: int, factor: int) -> np.ndarray:
    """(n_in*factor, n_in) interpolation weights, half-pixel centers."""
    n_out = n_in * factor
    m = np.zeros((n_out, n_in), dtype=_ACC)
    src = (np.arange(n_out) + 0.5) / factor - 0.5
    src = np.clip(src, 0.0, None)
    i0 = np.minimum(np.floor(src).astype(int), n_in - 1)
    i1 = np.minimum(i0 + 1, n_in - 1)
    lam = src - i0
    rows = np.arange(n_out)
    np.add.at(m, (rows, i0), 1.0 - lam)
    np.add.at(m, (rows, i1), lam)
    return m


def upsample_bilinear(x: Tensor, factor: int) -> Tensor:
    if factor < 1:
        raise ValueError(f"upsample factor must be >= 1, got {factor}")
    if factor == 1:
        return x
    N, C, H, W = x.shape
    mh, mw = bilinear_matrix(H, factor), bilinear_matrix(W, factor)
    out = np.matmul(mh, np.matmul(x.data.astype(_ACC), mw.T)).astype(x.dtype)
    _elementwise(out.size)

    def backward(g):
        return (np.matmul(mh.T, np.matmul(g.astype(_ACC), mw)).astype(x.dtype),)

    return make_output("upsample", out, (x,), backward)


# ---------------------------------------------------------------------------
# Linear algebra and shape ops

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched (B, M, K) @ (B, K, N)."""
    if a.ndim != 3 or b.ndim != 3 or a.shape[0] != b.shape[0] or a.shape[2] != b.shape[1]:
        raise ValueError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    a64, b64 = a.data.astype(_ACC), b.data.astype(_ACC)
    out = np.matmul(a64, b64).astype(a.dtype)
    B, M, K = a.shape
    add_flops("matmul", 2 * B * M * K * b.shape[2])

    def backward(g):
        g64 = g.astype(_ACC)
        return (np.matmul(g64, b64.transpose(0, 2, 1)).astype(a.dtype),
                np.matmul(a64.transpose(0, 2, 1), g64).astype(b.dtype))

    return make_output("matmul", out, (a, b), backward)


def concat_channels(xs: Sequence[Tensor]) -> Tensor:
    return concat(xs, axis=1)


def concat(xs: Sequence[Tensor], axis: int = 1) -> Tensor:
    xs = list(xs)
    ref = xs[0].shape
    for t in xs[1:]:
        if t.ndim != len(ref) or any(a != b for k, (a, b) in enumerate(zip(t.shape, ref)) if k != axis):
            raise ValueError(f"concat: shape {t.shape} incompatible with {ref} along axis {axis}")
    out = np.concatenate([t.data for t in xs], axis=axis)
    bounds = np.cumsum([0] + [t.shape[axis] for t in xs])

    def backward(g):
        return tuple(np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis) for i in range(len(xs)))

    return make_output("concat", out, tuple(xs), backward)


def split_channels(x: Tensor, parts: int = 2) -> list[Tensor]:
    """Split along C into ``parts`` equal pieces."""
    C = x.shape[1]
    if C % parts:
        raise ValueError(f"split_channels: {C} channels cannot be split into {parts} equal parts")
    step = C // parts
    outs = []
    for p in range(parts):
        lo, hi = p * step, (p + 1) * step

        def backward(g, lo=lo, hi=hi):
            gx = np.zeros(x.shape, dtype=x.dtype)
            gx[:, lo:hi] = g
            return (gx,)

        outs.append(make_output("split", np.ascontiguousarray(x.data[:, lo:hi]), (x,), backward))
    return outs


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    src = x.shape
    out = x.data.reshape(shape)
    return make_output("reshape", out, (x,), lambda g: (g.reshape(src),))


def permute(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    out = np.ascontiguousarray(x.data.transpose(axes))
    return make_output("permute", out, (x,), lambda g: (np.ascontiguousarray(g.transpose(inv)),))


def _reflect_index(n: int, pad_lo: int, pad_hi: int) -> np.ndarray:
    pos = np.arange(-pad_lo, n + pad_hi)
    if n == 1:
        return np.zeros_like(pos)
    period = 2 * (n - 1)
    m = np.mod(pos, period)
    return np.where(m >= n, period - m, m)


def pad2d(x: Tensor, pads: tuple[int, int, int, int], mode: str = "zero") -> Tensor:
    """Pad H and W by (top, bottom, left, right); mode 'zero' or 'reflect'."""
    top, bottom, left, right = pads
    N, C, H, W = x.shape
    if mode == "zero":
        out = np.zeros((N, C, H + top + bottom, W + left + right), dtype=x.dtype)
        out[:, :, top:top + H, left:left + W] = x.data

        def backward(g):
            return (np.ascontiguousarray(g[:, :, top:top + H, left:left + W]),)
    elif mode == "reflect":
        ih, iw = _reflect_index(H, top, bottom), _reflect_index(W, left, right)
        out = x.data[:, :, ih][:, :, :, iw]
        ph = np.zeros((ih.size, H), dtype=_ACC)
        ph[np.arange(ih.size), ih] = 1.0
        pw = np.zeros((iw.size, W), dtype=_ACC)
        pw[np.arange(iw.size), iw] = 1.0

        def backward(g):
            return (np.matmul(ph.T, np.matmul(g.astype(_ACC), pw)).astype(x.dtype),)
    else:
        raise ValueError(f"unknown pad mode {mode!r}")
    return make_output("pad2d", np.ascontiguousarray(out), (x,), backward)


def crop(x: Tensor, top: int, left: int, height: int, width: int) -> Tensor:
    N, C, H, W = x.shape
    if top < 0 or left < 0 or top + height > H or left + width > W:
        raise ValueError(f"crop window ({top},{left},{height},{width}) outside {H}x{W}")
    out = np.ascontiguousarray(x.data[:, :, top:top + height, left:left + width])

    def backward(g):
        gx = np.zeros(x.shape, dtype=x.dtype)
        gx[:, :, top:top + height, left:left + width] = g
        return (gx,)

    return make_output("crop", out, (x,), backward)
