"""Analytic FLOPs accounting for the enhancement network.

Entries are keyed by the same scope paths the instrumented counter
(:func:`ylie.autodiff.count_flops`) attributes to, so the two can be
compared layer by layer.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field

from .config import ModelConfig
from .params import param_shapes
from .pipeline import padded_size


@dataclass(frozen=True)
class FlopsReport:
    height: int
    width: int
    layers: dict[str, float] = field(default_factory=dict)   # scope path -> FLOPs

    @property
    def total(self) -> float:
        return float(sum(self.layers.values()))

    @property
    def macs(self) -> dict[str, float]:
        return {k: v / 2 for k, v in self.layers.items()}

    def table(self) -> list[tuple[str, float]]:
        return sorted(self.layers.items())


def count_flops(config: ModelConfig, height: int, width: int) -> FlopsReport:
    cfg = config
    shapes = param_shapes(cfg)
    acc: dict[str, float] = defaultdict(float)

    def add(path: str, f: float) -> None:
        acc[path] += f

    def conv(path: str, name: str, pixels: int) -> None:
        co, cig, kh, kw = shapes[f"{name}.w"]
        add(f"{path}/{name}" if path else name, 2 * co * cig * kh * kw * pixels)

    def attention(path: str, heads: int, d: int, tokens: int) -> None:
        add(path, heads * tokens * d)                     # q scaling
        add(path, 2 * 2 * heads * tokens * tokens * d)    # scores and weighted sum
        add(path, heads * tokens * tokens)                # softmax

    def fft(path: str, planes: int, n: int) -> None:
        add(path, 5 * n * math.log2(n) * planes if n > 1 else 0)

    Hp, Wp = padded_size(cfg, height, width)
    n = Hp * Wp
    fy, fu, fg, D = cfg.feat_y, cfg.feat_uv, cfg.feat_gi, cfg.dsgla_width
    half, quarter = D // 2, D // 4
    r = cfg.pool_ratio
    n8 = n // (r * r)
    n32 = n8 // (cfg.gga_pool ** 2)

    add("color", 2 * 9 * n)

    conv("", "y_embed", n)
    add("dsgla", fy * n)                                   # max pool
    conv("dsgla", "dsgla.expand", n8)
    conv("dsgla/ddsa", "dsgla.ddsa.qkv", n8)
    conv("dsgla/ddsa", "dsgla.ddsa.dw", n8)
    attention("dsgla/ddsa/attention", cfg.heads, cfg.head_dim, n8)
    conv("dsgla/ddsa", "dsgla.ddsa.proj", n8)
    conv("dsgla/gga", "dsgla.gga.base", n8)
    conv("dsgla/gga", "dsgla.gga.cheap", n8)
    add("dsgla/gga/gate", half * n8)                       # avg pool
    conv("dsgla/gga/gate", "dsgla.gga.short_h", n32)
    conv("dsgla/gga/gate", "dsgla.gga.short_v", n32)
    add("dsgla/gga/gate", 3 * half * n8)                   # upsample, sigmoid, gate
    conv("dsgla", "dsgla.fuse", n8)
    add("dsgla", 2 * fy * n)                               # upsample, residual
    conv("", "y_head", n)
    add("<root>", n)

    conv("", "uv_embed", n)
    conv("lafa", "lafa.guide", n)
    add("lafa", fu * n)
    fft("lafa/fca", fu, n)
    add("lafa/fca", 2 * fu * n + fu + cfg.fca_hidden + fu)  # pools, rescale, relu, sigmoid
    conv("lafa/fca", "lafa.fc1", 1)
    conv("lafa/fca", "lafa.fc2", 1)
    add("lafa/mask", 3 * fu * n)
    fft("lafa/mask", fu, n)
    conv("lafa", "lafa.dw", n)
    add("lafa/combine", 3 * fu * n)
    conv("", "uv_head", n)
    add("<root>", 2 * n)

    q = cfg.gi_pool
    n4 = n // (q * q)
    add("gi/cgm_global", (fy + fu) * n)                    # avg pools
    conv("gi/cgm_global", "gi.q", n4)
    conv("gi/cgm_global", "gi.kv", n4)
    attention("gi/cgm_global/attention", cfg.gi_heads, cfg.gi_head_dim, n4)
    conv("gi/cgm_global", "gi.proj", n4)
    add("gi/cgm_global", fg * n)                           # upsample
    for branch in ("y", "uv"):
        for k in cfg.hf_kernels:
            conv("gi/cgm_local", f"gi.hf_{branch}.k{k}", n)
        conv("gi/cgm_local", f"gi.hf_{branch}.fuse", n)
    add("gi/cgm_local", fg * n)
    k = cfg.lsa_k
    add("gi/cgm_local/lsa", fg * n)                        # row mean
    conv("gi/cgm_local/lsa", "gi.lsa", Hp)
    add("gi/cgm_local/lsa", k * fg * Hp + (2 * k) * fg * n)  # tanh, k products, k-1 sums, scale
    add("gi", fg * n)
    conv("gi/fa", "gi.fa.conv1", n)
    conv("gi/fa", "gi.fa.dw", n)
    conv("gi/fa", "gi.fa.conv2", n)
    add("gi/fa", 5 * fg * n)

    conv("merge", "out_head", n)
    add("merge", 3 * n)
    add("color", 2 * 9 * n)
    add("<root>", 3 * height * width)                      # clamp
    return FlopsReport(height, width, dict(acc))
