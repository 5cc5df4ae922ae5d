"""Enhancement network: configuration, parameters, blocks and wiring."""

from .config import ModelConfig
from .flops import FlopsReport, count_flops
from .params import ModelParams, cast_params, count_params, init_params, param_shapes
from .pipeline import enhance_tensor, network_yuv, pipeline_forward

__all__ = ["ModelConfig", "ModelParams", "FlopsReport", "count_flops", "count_params", "cast_params",
           "init_params", "param_shapes", "enhance_tensor", "network_yuv", "pipeline_forward"]
