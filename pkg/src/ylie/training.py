"""Losses, Adam, crop sampling and the training loop."""

from __future__ import annotations

import math
import os
import struct
import zlib
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .autodiff import ops
from .autodiff.tensor import Tape, Tensor, make_output
from .colorspace import ImageBuffer, rgb_to_yuv_tensor
from .metrics import psnr
from .model.config import ModelConfig
from .model.params import ModelParams, init_params
from .model.pipeline import enhance_tensor

LOSS_EPS = 1e-8
_TEN_OVER_LN10 = 10.0 / math.log(10.0)


class NonFiniteGradientError(FloatingPointError):
    def __init__(self, path: str):
        super().__init__(f"non-finite gradient for parameter {path!r}; step aborted")
        self.path = path


class NumericFailure(RuntimeError):
    """Training hit a non-finite loss or gradient."""

    def __init__(self, message: str, last_good: str | None, epoch: int):
        super().__init__(message)
        self.last_good = last_good
        self.epoch = epoch


# ---------------------------------------------------------------------------
# losses

def smooth_l1(pred: Tensor, target: Tensor, beta: float = 1.0) -> Tensor:
    """Mean Huber-style loss: quadratic below ``beta``, linear above."""
    if pred.shape != target.shape:
        raise ValueError(f"smooth_l1: shapes {pred.shape} and {target.shape} differ")
    if beta <= 0:
        raise ValueError(f"beta must be positive, got {beta}")
    d = pred.data.astype(np.float64) - target.data.astype(np.float64)
    a = np.abs(d)
    small = a < beta
    value = np.where(small, 0.5 * d * d / beta, a - 0.5 * beta).mean()
    n = d.size

    def backward(g):
        gd = np.asarray(g).item() * np.where(small, d / beta, np.sign(d)) / n
        return gd.astype(pred.dtype), (-gd).astype(target.dtype)

    return make_output("smooth_l1", np.asarray(value, dtype=pred.dtype), (pred, target), backward)


def psnr_loss(pred: Tensor, target: Tensor) -> Tensor:
    """10 * log10(MSE + eps): the negated PSNR, floored at -80 dB."""
    d = ops.sub(pred, target)
    mse = ops.mean_all(ops.mul(d, d))
    return ops.mul(ops.log(ops.add(mse, LOSS_EPS)), _TEN_OVER_LN10)


# ---------------------------------------------------------------------------
# Adam

@dataclass
class OptimState:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: ModelParams, lr: float, **kw) -> "OptimState":
        return cls(lr=lr, m={k: np.zeros(t.shape) for k, t in params.items()},
                   v={k: np.zeros(t.shape) for k, t in params.items()}, **kw)


def adam_step(params: ModelParams, grads: dict[str, np.ndarray], state: OptimState) -> ModelParams:
    """Bias-corrected Adam; returns new parameter tensors and advances ``state``.

    Every gradient is checked before any state changes.
    """
    for name in sorted(grads):
        if not np.all(np.isfinite(grads[name])):
            raise NonFiniteGradientError(name)
    t = state.step + 1
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    out = dict(params)
    for name, g in grads.items():
        p = params[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient for {name} has shape {g.shape}, parameter {p.shape}")
        g = g.astype(np.float64)
        m = state.m.get(name)
        v = state.v.get(name)
        m = state.beta1 * (np.zeros_like(g) if m is None else m) + (1.0 - state.beta1) * g
        v = state.beta2 * (np.zeros_like(g) if v is None else v) + (1.0 - state.beta2) * g * g
        state.m[name], state.v[name] = m, v
        update = state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        out[name] = Tensor((p.data.astype(np.float64) - update).astype(p.dtype), requires_grad=True, name=name)
    state.step = t
    return out


# ---------------------------------------------------------------------------
# data

def random_crop_pair(low: ImageBuffer, gt: ImageBuffer, crop: int, rng: np.random.Generator,
                     dtype=np.float32) -> tuple[Tensor, Tensor]:
    """Same random window from both images, as (1, 3, crop, crop) tensors."""
    if low.data.shape != gt.data.shape:
        raise ValueError(f"pair dims differ: {low.data.shape} vs {gt.data.shape}")
    H, W = low.height, low.width
    if H < crop or W < crop:
        raise ValueError(f"image {H}x{W} is smaller than the {crop}x{crop} crop")
    top = int(rng.integers(0, H - crop + 1))
    left = int(rng.integers(0, W - crop + 1))
    window = (slice(top, top + crop), slice(left, left + crop))
    a = ImageBuffer(low.data[window], low.space).to_tensor(dtype)
    b = ImageBuffer(gt.data[window], gt.space).to_tensor(dtype)
    return a, b


def load_pair_dir(root: str | os.PathLike) -> list[tuple[ImageBuffer, ImageBuffer]]:
    """Pairs from ``root/low`` and ``root/high`` matched by file name."""
    from .io.images import is_image_path, load_image

    root = Path(root)
    low_dir, high_dir = root / "low", root / "high"
    if not low_dir.is_dir() or not high_dir.is_dir():
        raise FileNotFoundError(f"{root} needs low/ and high/ subdirectories")
    low = {p.name: p for p in low_dir.iterdir() if is_image_path(p)}
    high = {p.name: p for p in high_dir.iterdir() if is_image_path(p)}
    unmatched = sorted(low.keys() ^ high.keys())
    if unmatched:
        raise ValueError(f"{root}: images without a partner: {', '.join(unmatched)}")
    if not low:
        raise ValueError(f"{root}: no images found")
    pairs = []
    for name in sorted(low):
        a, b = load_image(low[name]), load_image(high[name])
        if a.space != "RGB" or b.space != "RGB":
            raise ValueError(f"{name}: training pairs must be RGB")
        pairs.append((a, b))
    return pairs


def _pink_field(rng: np.random.Generator, size: int) -> np.ndarray:
    """Random-phase field with a 1/f amplitude spectrum, scaled to [0, 1]."""
    from .spectral import ifft2_complex

    f = np.fft.fftfreq(size)
    radius = np.hypot(f[:, None], f[None, :])
    radius[0, 0] = 1.0
    z = ifft2_complex(np.exp(2j * np.pi * rng.random((size, size))) / radius).real
    return (z - z.min()) / (z.max() - z.min())


def synthetic_pair(size: int, seed: int, noise: float = 0.02) -> tuple[ImageBuffer, ImageBuffer]:
    """Textured RGB scene and an under-exposed, noisy version of it, both
    quantized to 8 bits.

    The scene has the 1/f amplitude fall-off of natural photographs, so
    sensor noise in the dark frame lands on frequencies that carry signal
    in the ground truth. Darkening follows a per-image exposure and gamma,
    with a slight colour cast, so both the luma and chroma planes need
    correcting.
    """
    rng = np.random.default_rng(seed)
    planes = np.stack([_pink_field(rng, size) for _ in range(3)], axis=-1)
    # partially correlated channels, as in real scenes
    gt = np.clip(planes @ (0.2 + 0.8 * np.eye(3)) / 1.2, 0.0, 1.0)
    exposure = rng.uniform(0.12, 0.25)
    gamma = rng.uniform(1.2, 1.6)
    cast = 1.0 + rng.uniform(-0.15, 0.15, size=3)
    low = exposure * gt ** gamma * cast + noise * rng.standard_normal(gt.shape)
    low = np.clip(low, 0.0, 1.0)
    return _quantized(low), _quantized(gt)


def _quantized(x: np.ndarray) -> ImageBuffer:
    return ImageBuffer((np.floor(x * 255.0 + 0.5) / 255.0).astype(np.float32), "RGB")


# ---------------------------------------------------------------------------
# training loop

@dataclass(frozen=True)
class TrainConfig:
    lr: float = 2e-4
    epochs: int = 1
    crop: int = 256
    batch: int = 1
    w_smooth: float = 1.0
    w_psnr: float = 0.1
    beta: float = 1.0
    seed: int = 0
    schedule: str = "cosine"          # or "constant"
    lr_min: float = 1e-6
    loss_space: str = "rgb"           # or "yuv"
    checkpoint_every: int = 0         # epochs; 0 disables
    checkpoint_path: str | None = None

    def validate(self, mcfg: ModelConfig) -> None:
        if self.crop % mcfg.pool_ratio:
            raise ValueError(f"crop {self.crop} must be divisible by pool_ratio {mcfg.pool_ratio}")
        if self.w_smooth < 0 or self.w_psnr < 0 or (self.w_smooth == 0 and self.w_psnr == 0):
            raise ValueError("loss weights must be non-negative and not both zero")
        if self.schedule not in ("cosine", "constant"):
            raise ValueError(f"unknown lr schedule {self.schedule!r}")
        if self.loss_space not in ("rgb", "yuv"):
            raise ValueError(f"unknown loss space {self.loss_space!r}")
        if self.epochs < 0 or self.batch < 1 or self.lr < 0:
            raise ValueError("epochs >= 0, batch >= 1 and lr >= 0 required")

    def replace(self, **kw) -> "TrainConfig":
        return replace(self, **kw)


@dataclass(frozen=True)
class EpochRecord:
    epoch: int      # 1-based
    step: int       # optimizer steps taken so far
    loss: float
    train_psnr: float
    lr: float


def lr_at(tcfg: TrainConfig, step: int, total_steps: int) -> float:
    """Learning rate for 0-based ``step``; cosine from lr to lr_min."""
    if tcfg.schedule == "constant" or total_steps <= 1 or tcfg.lr == 0:
        return tcfg.lr
    lo = min(tcfg.lr_min, tcfg.lr)
    return lo + 0.5 * (tcfg.lr - lo) * (1.0 + math.cos(math.pi * step / (total_steps - 1)))


def epoch_order(seed: int, epoch: int, n: int) -> np.ndarray:
    """Shuffled pair order; depends only on (seed, epoch)."""
    return np.random.default_rng([seed, epoch, 0]).permutation(n)


def joint_loss(pred: Tensor, target: Tensor, tcfg: TrainConfig) -> Tensor:
    if tcfg.loss_space == "yuv":
        pred, target = rgb_to_yuv_tensor(pred), rgb_to_yuv_tensor(target)
    terms = []
    if tcfg.w_smooth:
        terms.append(ops.mul(smooth_l1(pred, target, tcfg.beta), tcfg.w_smooth))
    if tcfg.w_psnr:
        terms.append(ops.mul(psnr_loss(pred, target), tcfg.w_psnr))
    return terms[0] if len(terms) == 1 else ops.add(terms[0], terms[1])


def loss_and_grads(params: ModelParams, mcfg: ModelConfig, tcfg: TrainConfig, low: Tensor,
                   target: Tensor) -> tuple[float, dict[str, np.ndarray], np.ndarray]:
    """Loss, per-parameter gradients and the clamped prediction."""
    with Tape() as tape:
        handles = {name: tape.watch(t) for name, t in params.items()}
        # clamping would zero the gradient of out-of-range pixels; train on the raw output
        pred = enhance_tensor(params, mcfg, low, clamp=False)
        loss = joint_loss(pred, target, tcfg)
    value = float(loss.item())
    if not math.isfinite(value):
        return value, {}, np.clip(pred.data, 0.0, 1.0)
    g = tape.backward(loss)
    return value, {name: g[h] for name, h in handles.items()}, np.clip(pred.data, 0.0, 1.0)


def _batch(pairs, idx, crop, rng, dtype) -> tuple[Tensor, Tensor]:
    lows, gts = zip(*(random_crop_pair(*pairs[i], crop, rng, dtype) for i in idx))
    if len(idx) == 1:
        return lows[0], gts[0]
    return (Tensor(np.concatenate([t.data for t in lows])), Tensor(np.concatenate([t.data for t in gts])))


@dataclass
class TrainResult:
    params: ModelParams
    history: list[EpochRecord]
    state: OptimState
    checkpoints: list[str] = field(default_factory=list)

    def __iter__(self):
        # unpacks as (params, history)
        return iter((self.params, self.history))


def train(dataset: Sequence[tuple[ImageBuffer, ImageBuffer]], mcfg: ModelConfig, tcfg: TrainConfig,
          params: ModelParams | None = None, state: OptimState | None = None, start_epoch: int = 0,
          on_epoch: Callable[[EpochRecord], None] | None = None,
          on_checkpoint: Callable[[str, OptimState, int], None] | None = None) -> TrainResult:
    """Train up to epoch ``tcfg.epochs`` (one optimizer step per batch).

    ``start_epoch``, ``params`` and ``state`` resume an earlier run of the
    same ``tcfg``; the shuffle, crop windows and lr schedule depend only on
    the seed and the absolute epoch/step, so resumed and uninterrupted runs
    agree. ``on_checkpoint(path, state, epoch)`` runs after each checkpoint.
    """
    from .io.checkpoint import save_checkpoint

    if not dataset:
        raise ValueError("training needs at least one pair")
    tcfg.validate(mcfg)
    if not 0 <= start_epoch <= tcfg.epochs:
        raise ValueError(f"start_epoch {start_epoch} outside [0, {tcfg.epochs}]")
    if params is None:
        params = init_params(mcfg, seed=tcfg.seed)
    if state is None:
        state = OptimState.for_params(params, tcfg.lr)
    dtype = next(iter(params.values())).dtype
    n = len(dataset)
    steps_per_epoch = -(-n // tcfg.batch)
    total_steps = tcfg.epochs * steps_per_epoch
    history: list[EpochRecord] = []
    checkpoints: list[str] = []
    last_good = None

    for epoch in range(start_epoch, tcfg.epochs):
        order = epoch_order(tcfg.seed, epoch, n)
        crop_rng = np.random.default_rng([tcfg.seed, epoch, 1])
        losses, scores = [], []
        for b in range(steps_per_epoch):
            idx = order[b * tcfg.batch:(b + 1) * tcfg.batch]
            low, gt = _batch(dataset, idx, tcfg.crop, crop_rng, dtype)
            value, grads, pred = loss_and_grads(params, mcfg, tcfg, low, gt)
            if not math.isfinite(value):
                raise NumericFailure(f"non-finite loss {value} at epoch {epoch + 1}", last_good, epoch + 1)
            state.lr = lr_at(tcfg, state.step, total_steps)
            try:
                params = adam_step(params, grads, state)
            except NonFiniteGradientError as exc:
                raise NumericFailure(str(exc), last_good, epoch + 1) from exc
            losses.append(value)
            scores.append(min(psnr(pred, gt.data), 100.0))
        rec = EpochRecord(epoch + 1, state.step, float(np.mean(losses)), float(np.mean(scores)), state.lr)
        history.append(rec)
        if on_epoch is not None:
            on_epoch(rec)
        if tcfg.checkpoint_every and tcfg.checkpoint_path and (epoch + 1) % tcfg.checkpoint_every == 0:
            save_checkpoint(params, mcfg, tcfg.checkpoint_path)
            if on_checkpoint is not None:
                on_checkpoint(tcfg.checkpoint_path, state, epoch + 1)
            last_good = tcfg.checkpoint_path
            checkpoints.append(tcfg.checkpoint_path)
    return TrainResult(params, history, state, checkpoints)


# ---------------------------------------------------------------------------
# optimizer state sidecar: b"YLST", u32 version, u64 step, u64 epoch, f64 lr,
# u32 count, then per tensor: u16 name length, name, u8 rank, u32 dims,
# f64 first moment, f64 second moment; trailing CRC32. Little-endian.

_STATE_MAGIC = b"YLST"


def train_state_path(checkpoint: str | os.PathLike) -> Path:
    return Path(str(checkpoint) + ".state")


def save_train_state(state: OptimState, epoch: int, checkpoint: str | os.PathLike) -> Path:
    from .io.atomic import atomic_write_bytes

    parts = [_STATE_MAGIC, struct.pack("<IQQd", 1, state.step, epoch, state.lr), struct.pack("<I", len(state.m))]
    for name in sorted(state.m):
        m, v = state.m[name], state.v[name]
        b = name.encode("utf-8")
        parts.append(struct.pack("<H", len(b)) + b + struct.pack(f"<B{m.ndim}I", m.ndim, *m.shape))
        parts.append(m.astype("<f8").tobytes() + v.astype("<f8").tobytes())
    body = b"".join(parts)
    path = train_state_path(checkpoint)
    atomic_write_bytes(path, body + struct.pack("<I", zlib.crc32(body)))
    return path


def load_train_state(checkpoint: str | os.PathLike) -> tuple[OptimState, int]:
    """Optimizer state and completed-epoch count saved next to ``checkpoint``."""
    path = train_state_path(checkpoint)
    raw = path.read_bytes()
    if raw[:4] != _STATE_MAGIC or len(raw) < 40:
        raise ValueError(f"{path} is not a training-state file")
    body, (crc,) = raw[:-4], struct.unpack("<I", raw[-4:])
    if zlib.crc32(body) != crc:
        raise ValueError(f"{path}: CRC mismatch")
    version, step, epoch, lr = struct.unpack("<IQQd", body[4:32])
    if version != 1:
        raise ValueError(f"{path}: unsupported training-state version {version}")
    (count,) = struct.unpack("<I", body[32:36])
    pos = 36
    state = OptimState(lr=lr, step=step)
    for _ in range(count):
        (n,) = struct.unpack("<H", body[pos:pos + 2])
        name = body[pos + 2:pos + 2 + n].decode("utf-8")
        pos += 2 + n
        (rank,) = struct.unpack("<B", body[pos:pos + 1])
        dims = struct.unpack(f"<{rank}I", body[pos + 1:pos + 1 + 4 * rank])
        pos += 1 + 4 * rank
        size = int(np.prod(dims)) if rank else 1
        m = np.frombuffer(body, "<f8", size, pos).reshape(dims).astype(np.float64)
        v = np.frombuffer(body, "<f8", size, pos + 8 * size).reshape(dims).astype(np.float64)
        pos += 16 * size
        state.m[name], state.v[name] = m, v
    return state, epoch
