"""Binary checkpoint container.

Layout (all integers little-endian)::

    b"YLIE" | u32 version
    u32 field count, then per field: u16 name length, name (UTF-8),
        u8 kind (0 int64, 1 float64, 2 int64 tuple: u32 length + values)
    u32 tensor count, then per tensor: u16 name length, name (UTF-8),
        u8 rank, u32 dims[rank], float32 payload
    u32 CRC32 of every preceding byte
"""

from __future__ import annotations

import dataclasses
import os
import struct
import zlib
from pathlib import Path

import numpy as np

from ..autodiff.tensor import Tensor
from ..model.config import ModelConfig
from ..model.params import ModelParams, param_shapes
from .atomic import atomic_write_bytes

MAGIC = b"YLIE"
VERSION = 1

_INT, _FLOAT, _TUPLE = 0, 1, 2


class CheckpointError(Exception):
    """Base class for checkpoint failures."""


class BadMagicError(CheckpointError):
    pass


class VersionError(CheckpointError):
    pass


class CRCError(CheckpointError):
    pass


class TruncatedError(CheckpointError):
    pass


class ShapeMismatchError(CheckpointError):
    pass


class ConfigMismatchError(CheckpointError):
    def __init__(self, field: str, stored, expected):
        super().__init__(f"config mismatch at field {field!r}: checkpoint has {stored!r}, expected {expected!r}")
        self.field = field


# ---------------------------------------------------------------------------
# encoding

def _name(s: str) -> bytes:
    b = s.encode("utf-8")
    return struct.pack("<H", len(b)) + b


def _encode_config(cfg: ModelConfig) -> bytes:
    out = [struct.pack("<I", len(dataclasses.fields(cfg)))]
    for f in dataclasses.fields(cfg):
        v = getattr(cfg, f.name)
        out.append(_name(f.name))
        if isinstance(v, tuple):
            out.append(struct.pack(f"<BI{len(v)}q", _TUPLE, len(v), *v))
        elif isinstance(v, float):
            out.append(struct.pack("<Bd", _FLOAT, v))
        elif isinstance(v, int):
            out.append(struct.pack("<Bq", _INT, v))
        else:
            raise TypeError(f"cannot serialize config field {f.name}={v!r}")
    return b"".join(out)


def encode_checkpoint(params: ModelParams, config: ModelConfig) -> bytes:
    parts = [MAGIC, struct.pack("<I", VERSION), _encode_config(config), struct.pack("<I", len(params))]
    for name in sorted(params):
        arr = np.asarray(params[name].data if isinstance(params[name], Tensor) else params[name])
        parts.append(_name(name))
        parts.append(struct.pack(f"<B{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(arr.astype("<f4").tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def save_checkpoint(params: ModelParams, config: ModelConfig, path: str | os.PathLike) -> None:
    atomic_write_bytes(path, encode_checkpoint(params, config))


# ---------------------------------------------------------------------------
# decoding

class _Reader:
    def __init__(self, buf: bytes, pos: int):
        self.buf, self.pos = buf, pos

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise TruncatedError(f"checkpoint truncated at byte {self.pos}")
        b = self.buf[self.pos:self.pos + n]
        self.pos += n
        return b

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def name(self) -> str:
        (n,) = self.unpack("<H")
        return self.take(n).decode("utf-8")


def _decode_config(r: _Reader) -> ModelConfig:
    (count,) = r.unpack("<I")
    values = {}
    for _ in range(count):
        name = r.name()
        (kind,) = r.unpack("<B")
        if kind == _INT:
            (values[name],) = r.unpack("<q")
        elif kind == _FLOAT:
            (values[name],) = r.unpack("<d")
        elif kind == _TUPLE:
            (n,) = r.unpack("<I")
            values[name] = tuple(r.unpack(f"<{n}q"))
        else:
            raise CheckpointError(f"unknown config value kind {kind} for field {name!r}")
    known = {f.name for f in dataclasses.fields(ModelConfig)}
    missing = sorted(known - set(values))
    if missing:
        raise CheckpointError(f"checkpoint config lacks fields {missing}")
    unknown = sorted(set(values) - known)
    if unknown:
        raise CheckpointError(f"checkpoint config has unknown fields {unknown}")
    try:
        return ModelConfig.from_dict(values)
    except ValueError as exc:
        raise CheckpointError(f"checkpoint config invalid: {exc}") from exc


def first_config_difference(a: ModelConfig, b: ModelConfig) -> str | None:
    for f in dataclasses.fields(ModelConfig):
        if getattr(a, f.name) != getattr(b, f.name):
            return f.name
    return None


def decode_checkpoint(raw: bytes, expected_config: ModelConfig | None = None) -> tuple[ModelParams, ModelConfig]:
    if raw[:4] != MAGIC:
        raise BadMagicError(f"not a checkpoint (magic {raw[:4]!r}, expected {MAGIC!r})")
    if len(raw) < 12:
        raise TruncatedError("checkpoint shorter than its fixed header")
    (version,) = struct.unpack("<I", raw[4:8])
    if version != VERSION:
        raise VersionError(f"checkpoint format version {version}, this build reads {VERSION}")
    body, (crc,) = raw[:-4], struct.unpack("<I", raw[-4:])
    if zlib.crc32(body) != crc:
        raise CRCError(f"checkpoint CRC mismatch (stored {crc:08x}, computed {zlib.crc32(body):08x})")

    r = _Reader(body, 8)
    config = _decode_config(r)
    if expected_config is not None:
        field = first_config_difference(config, expected_config)
        if field is not None:
            raise ConfigMismatchError(field, getattr(config, field), getattr(expected_config, field))
    (count,) = r.unpack("<I")
    params: ModelParams = {}
    for _ in range(count):
        name = r.name()
        (rank,) = r.unpack("<B")
        dims = r.unpack(f"<{rank}I")
        n = int(np.prod(dims)) if rank else 1
        payload = np.frombuffer(r.take(4 * n), dtype="<f4").astype(np.float32).reshape(dims)
        params[name] = Tensor(payload, dtype=np.float32)
    if r.pos != len(body):
        raise CheckpointError(f"{len(body) - r.pos} unexpected trailing bytes in checkpoint")

    expected = param_shapes(config)
    for name in sorted(set(expected) | set(params)):
        if name not in params:
            raise ShapeMismatchError(f"checkpoint lacks tensor {name!r}")
        if name not in expected:
            raise ShapeMismatchError(f"checkpoint has tensor {name!r} that the architecture does not use")
        if tuple(params[name].shape) != tuple(expected[name]):
            raise ShapeMismatchError(f"tensor {name!r} has shape {params[name].shape}, architecture needs {expected[name]}")
    return params, config


def load_checkpoint(path: str | os.PathLike, expected_config: ModelConfig | None = None) -> tuple[ModelParams, ModelConfig]:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc.strerror}") from exc
    return decode_checkpoint(raw, expected_config)
