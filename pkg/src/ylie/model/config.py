"""Architecture hyperparameters."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields


@dataclass(frozen=True)
class ModelConfig:
    feat_y: int = 16            # Y-branch feature width at full resolution
    dsgla_width: int = 88       # DSGLA working width after pooling (split in half)
    feat_uv: int = 16           # UV-branch feature width
    heads: int = 2              # DDSA heads
    head_dim: int = 16          # DDSA per-head width
    pool_ratio: int = 8         # DSGLA max-pool factor
    gga_pool: int = 4           # GGA shortcut avg-pool factor
    ddsa_dilation: int = 2
    lsa_k: int = 7              # strip attention extent
    hf_kernels: tuple[int, ...] = (3, 5, 7)
    fca_hidden: int = 16
    gamma_init: float = 0.0
    seed: int = 0
    feat_gi: int = 16           # GI working width
    gi_heads: int = 1
    gi_head_dim: int = 4
    gi_pool: int = 4            # CGM global branch pooling
    short_groups: int = 2       # groups of the GGA asymmetric convs

    def __post_init__(self):
        if self.dsgla_width % 4:
            raise ValueError(f"dsgla_width must be a multiple of 4 (split, then ghost halves), got {self.dsgla_width}")
        if (self.dsgla_width // 2) % self.short_groups:
            raise ValueError(f"short_groups={self.short_groups} must divide dsgla_width/2={self.dsgla_width // 2}")
        for k in self.hf_kernels:
            if k % 2 == 0:
                raise ValueError(f"multi-scale kernels must be odd, got {k}")
        if self.lsa_k % 2 == 0:
            raise ValueError(f"lsa_k must be odd, got {self.lsa_k}")
        positive = ("feat_y", "dsgla_width", "feat_uv", "heads", "head_dim", "pool_ratio", "gga_pool", "ddsa_dilation",
                    "fca_hidden", "feat_gi", "gi_heads", "gi_head_dim", "gi_pool", "short_groups")
        for name in positive:
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")

    @property
    def attn_dim(self) -> int:
        return self.heads * self.head_dim

    @property
    def gi_attn_dim(self) -> int:
        return self.gi_heads * self.gi_head_dim

    @property
    def size_multiple(self) -> int:
        """Spatial dims the network body needs to be divisible by."""
        a = self.pool_ratio * self.gga_pool
        return a * self.gi_pool // math.gcd(a, self.gi_pool)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        kw = {k: v for k, v in d.items() if k in known}
        if "hf_kernels" in kw:
            kw["hf_kernels"] = tuple(kw["hf_kernels"])
        return cls(**kw)

    def replace(self, **kw) -> "ModelConfig":
        d = self.to_dict()
        d.update(kw)
        return ModelConfig.from_dict(d)
