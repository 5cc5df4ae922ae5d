"""Parameter layout, initialization and counting."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict

import numpy as np

from ..autodiff.tensor import Tensor
from .config import ModelConfig

ModelParams = Dict[str, Tensor]

# Residual output heads; zero at init so the network starts as the identity.
HEADS = ("y_head", "uv_head", "out_head")


@dataclass(frozen=True)
class ParamSpec:
    name: str
    shape: tuple[int, ...]
    init: str           # "fan_in" | "zero" | "one" | "gamma"
    fan_in: int = 1


def _conv(specs: list, name: str, cin: int, cout: int, kh: int, kw: int | None = None,
          groups: int = 1, head: bool = False) -> None:
    kw = kh if kw is None else kw
    fan_in = (cin // groups) * kh * kw
    specs.append(ParamSpec(f"{name}.w", (cout, cin // groups, kh, kw), "zero" if head else "fan_in", fan_in))
    specs.append(ParamSpec(f"{name}.b", (cout,), "zero"))


def param_specs(cfg: ModelConfig) -> list[ParamSpec]:
    fy, fu, fg = cfg.feat_y, cfg.feat_uv, cfg.feat_gi
    D = cfg.dsgla_width
    half, quarter = D // 2, D // 4
    specs: list[ParamSpec] = []
    _conv(specs, "y_embed", 1, fy, 3)
    _conv(specs, "uv_embed", 2, fu, 3)

    _conv(specs, "dsgla.expand", fy, D, 1)
    qkv = 3 * cfg.attn_dim
    _conv(specs, "dsgla.ddsa.qkv", half, qkv, 1)
    _conv(specs, "dsgla.ddsa.dw", qkv, qkv, 3, groups=qkv)
    _conv(specs, "dsgla.ddsa.proj", cfg.attn_dim, half, 1)
    _conv(specs, "dsgla.gga.base", half, quarter, 1)
    _conv(specs, "dsgla.gga.cheap", quarter, quarter, 3, groups=quarter)
    _conv(specs, "dsgla.gga.short_h", half, half, 1, 5, groups=cfg.short_groups)
    _conv(specs, "dsgla.gga.short_v", half, half, 5, 1, groups=cfg.short_groups)
    _conv(specs, "dsgla.fuse", D, fy, 1)
    _conv(specs, "y_head", fy, 1, 3, head=True)

    _conv(specs, "lafa.guide", fy, fu, 1)
    _conv(specs, "lafa.fc1", 2 * fu, cfg.fca_hidden, 1)
    _conv(specs, "lafa.fc2", cfg.fca_hidden, fu, 1)
    specs.append(ParamSpec("lafa.mask_amp", (1, fu, 1, 1), "one"))
    specs.append(ParamSpec("lafa.mask_phase", (1, fu, 1, 1), "one"))
    _conv(specs, "lafa.dw", fu, fu, 3, groups=fu)
    _conv(specs, "uv_head", fu, 2, 3, head=True)

    _conv(specs, "gi.q", fy, cfg.gi_attn_dim, 1)
    _conv(specs, "gi.kv", fu, 2 * cfg.gi_attn_dim, 1)
    _conv(specs, "gi.proj", cfg.gi_attn_dim, fg, 1)
    for branch, width in (("y", fy), ("uv", fu)):
        for k in cfg.hf_kernels:
            _conv(specs, f"gi.hf_{branch}.k{k}", width, width, k, groups=width)
        _conv(specs, f"gi.hf_{branch}.fuse", width * len(cfg.hf_kernels), fg, 1)
    _conv(specs, "gi.lsa", fg, fg * cfg.lsa_k, 1)
    _conv(specs, "gi.fa.conv1", fg, fg, 1)
    _conv(specs, "gi.fa.dw", fg, fg, 3, groups=fg)
    _conv(specs, "gi.fa.conv2", fg, fg, 1)
    specs.append(ParamSpec("gi.fa.gamma", (1, 1, 1, 1), "gamma"))
    _conv(specs, "out_head", fg, 3, 3, head=True)
    return specs


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    return {s.name: s.shape for s in param_specs(cfg)}


def init_params(cfg: ModelConfig, seed: int | None = None, zero_heads: bool = True,
                dtype=np.float32) -> ModelParams:
    """Fan-in scaled uniform weights (std 1/sqrt(fan_in)), zero biases, unit
    spectrum masks, gamma = cfg.gamma_init.

    With ``zero_heads=False`` the residual heads are drawn like any other
    weight, which gives a generic (non-identity) network for testing.
    """
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    params: ModelParams = {}
    for spec in param_specs(cfg):
        init = spec.init
        if init == "zero" and not zero_heads and spec.name.split(".")[0] in HEADS and spec.name.endswith(".w"):
            init = "fan_in"
            spec = ParamSpec(spec.name, spec.shape, init, int(np.prod(spec.shape[1:])))
        if init == "fan_in":
            bound = np.sqrt(3.0 / spec.fan_in)
            data = rng.uniform(-bound, bound, size=spec.shape)
        elif init == "zero":
            data = np.zeros(spec.shape)
        elif init == "one":
            data = np.ones(spec.shape)
        elif init == "gamma":
            data = np.full(spec.shape, cfg.gamma_init)
        else:
            raise AssertionError(init)
        params[spec.name] = Tensor(data.astype(dtype), requires_grad=True, name=spec.name)
    return params


def count_params(params: ModelParams) -> int:
    return int(sum(t.size for t in params.values()))


def cast_params(params: ModelParams, dtype) -> ModelParams:
    return {k: Tensor(v.data.astype(dtype), requires_grad=True, name=k) for k, v in params.items()}
