from .tensor import Tape, Tensor, backward, count_flops, scope
from . import ops

__all__ = ["Tape", "Tensor", "backward", "count_flops", "scope", "ops"]
