"""Central finite-difference gradient checking in float64."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from . import ops
from .tensor import Tape, Tensor


def numerical_grad(f: Callable[[list[np.ndarray]], float], arrays: list[np.ndarray], which: int,
                   h: float = 1e-3, indices: Sequence[tuple] | None = None) -> np.ndarray:
    """Central differences of scalar ``f`` w.r.t. ``arrays[which]``.

    With ``indices`` only those entries are perturbed and the result is a
    flat vector in that order.
    """
    base = arrays[which]
    idx_iter = list(indices) if indices is not None else list(np.ndindex(base.shape))
    out = np.zeros(len(idx_iter))
    for n, idx in enumerate(idx_iter):
        plus = [a.copy() for a in arrays]
        minus = [a.copy() for a in arrays]
        plus[which][idx] += h
        minus[which][idx] -= h
        out[n] = (f(plus) - f(minus)) / (2 * h)
    return out if indices is not None else out.reshape(base.shape)


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """max |a - n| scaled by the largest numeric magnitude."""
    scale = max(float(np.max(np.abs(numeric))), 1e-12)
    return float(np.max(np.abs(analytic - numeric))) / scale


def check_op(fn: Callable[..., Tensor], inputs: Sequence[np.ndarray], h: float = 1e-3,
             seed: int = 0) -> float:
    """Worst relative error over all inputs of ``sum(fn(*inputs) * R)``.

    ``R`` is a fixed random weighting so the check sees a generic cotangent.
    """
    arrays = [np.asarray(a, dtype=np.float64) for a in inputs]
    probe = fn(*[Tensor(a) for a in arrays])
    weights = np.random.default_rng(seed).standard_normal(probe.shape)

    def scalar(arrs):
        return float(np.sum(fn(*[Tensor(a) for a in arrs]).data * weights))

    leaves = [Tensor(a, requires_grad=True) for a in arrays]
    with Tape() as tape:
        loss = ops.sum_all(ops.mul(fn(*leaves), Tensor(weights)))
    tape.backward(loss)
    worst = 0.0
    for k, leaf in enumerate(leaves):
        num = numerical_grad(scalar, arrays, k, h)
        worst = max(worst, relative_error(tape.grad(leaf), num))
    return worst
