"""8-bit image files: binary Netpbm (P5/P6) and a small PNG codec."""

from __future__ import annotations

import os
import struct
import zlib
from pathlib import Path

import numpy as np

from ..colorspace import ImageBuffer
from .atomic import atomic_write_bytes

PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"
_NETPBM_EXT = {".ppm", ".pgm", ".pnm"}


class ImageFormatError(ValueError):
    """Malformed, truncated or unsupported image file."""


# ---------------------------------------------------------------------------
# quantization

def to_uint8(data: np.ndarray) -> np.ndarray:
    """[0, 1] floats to bytes, rounding halves up."""
    return np.floor(np.clip(data.astype(np.float64), 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def from_uint8(data: np.ndarray) -> np.ndarray:
    return data.astype(np.float32) / np.float32(255.0)


def _buffer(pixels: np.ndarray) -> ImageBuffer:
    if pixels.ndim == 2:
        pixels = pixels[:, :, None]
    space = "Y" if pixels.shape[2] == 1 else "RGB"
    return ImageBuffer(from_uint8(pixels), space)


# ---------------------------------------------------------------------------
# Netpbm

def _netpbm_header(raw: bytes) -> tuple[str, int, int, int, int]:
    """Returns (magic, width, height, maxval, payload offset)."""
    tokens: list[bytes] = []
    i, n = 0, len(raw)
    while len(tokens) < 4:
        while i < n and raw[i:i + 1].isspace():
            i += 1
        if i < n and raw[i:i + 1] == b"#":
            while i < n and raw[i:i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        start = i
        while i < n and not raw[i:i + 1].isspace() and raw[i:i + 1] != b"#":
            i += 1
        if start == i:
            raise ImageFormatError("truncated Netpbm header")
        tokens.append(raw[start:i])
    if i >= n:
        raise ImageFormatError("truncated Netpbm header: no whitespace after maxval")
    magic = tokens[0].decode("ascii", "replace")
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise ImageFormatError(f"malformed Netpbm header fields {tokens[1:]!r}") from exc
    return magic, width, height, maxval, i + 1


def decode_netpbm(raw: bytes) -> ImageBuffer:
    if raw[:2] not in (b"P5", b"P6"):
        raise ImageFormatError(f"not a binary PGM/PPM file (magic {raw[:2]!r})")
    magic, width, height, maxval, off = _netpbm_header(raw)
    if magic not in ("P5", "P6"):
        raise ImageFormatError(f"unsupported Netpbm magic {magic!r}")
    if width < 1 or height < 1:
        raise ImageFormatError(f"invalid image size {width}x{height}")
    if maxval != 255:
        raise ImageFormatError(f"unsupported bit depth: maxval {maxval} (only 255 is supported)")
    channels = 3 if magic == "P6" else 1
    need = width * height * channels
    payload = raw[off:off + need]
    if len(payload) < need:
        raise ImageFormatError(f"truncated payload: expected {need} bytes, found {len(payload)}")
    pixels = np.frombuffer(payload, dtype=np.uint8).reshape(height, width, channels)
    return _buffer(pixels)


def encode_netpbm(img: ImageBuffer) -> bytes:
    if img.channels not in (1, 3):
        raise ValueError(f"Netpbm needs 1 or 3 channels, got {img.channels}")
    magic = b"P6" if img.channels == 3 else b"P5"
    header = magic + b"\n%d %d\n255\n" % (img.width, img.height)
    return header + to_uint8(img.data).tobytes()


# ---------------------------------------------------------------------------
# PNG (8-bit gray / RGB, non-interlaced)

def _paeth(a: np.ndarray, b: np.ndarray, c: np.ndarray) -> np.ndarray:
    p = a + b - c
    pa, pb, pc = np.abs(p - a), np.abs(p - b), np.abs(p - c)
    return np.where((pa <= pb) & (pa <= pc), a, np.where(pb <= pc, b, c))


def _unfilter(data: bytes, height: int, stride: int, bpp: int) -> np.ndarray:
    if len(data) < height * (stride + 1):
        raise ImageFormatError("truncated PNG image data")
    rows = np.frombuffer(data, dtype=np.uint8)[:height * (stride + 1)].reshape(height, stride + 1)
    out = np.zeros((height, stride), dtype=np.int32)
    prev = np.zeros(stride, dtype=np.int32)
    for y in range(height):
        ftype, line = rows[y, 0], rows[y, 1:].astype(np.int32)
        if ftype == 0:
            cur = line
        elif ftype == 2:
            cur = (line + prev) & 0xFF
        elif ftype in (1, 3, 4):
            # left neighbour dependence: go pixel by pixel in bpp-wide columns
            cur = np.zeros(stride, dtype=np.int32)
            for x in range(0, stride, bpp):
                left = cur[x - bpp:x] if x >= bpp else np.zeros(bpp, np.int32)
                up = prev[x:x + bpp]
                if ftype == 1:
                    pred = left
                elif ftype == 3:
                    pred = (left + up) >> 1
                else:
                    upleft = prev[x - bpp:x] if x >= bpp else np.zeros(bpp, np.int32)
                    pred = _paeth(left, up, upleft)
                cur[x:x + bpp] = (line[x:x + bpp] + pred) & 0xFF
        else:
            raise ImageFormatError(f"invalid PNG filter type {ftype}")
        out[y] = cur
        prev = cur
    return out.astype(np.uint8)


def decode_png(raw: bytes) -> ImageBuffer:
    if raw[:8] != PNG_SIGNATURE:
        raise ImageFormatError("not a PNG file")
    pos, header, idat = 8, None, []
    while True:
        if pos + 8 > len(raw):
            raise ImageFormatError("truncated PNG: missing IEND")
        length, ctype = struct.unpack(">I4s", raw[pos:pos + 8])
        body = raw[pos + 8:pos + 8 + length]
        crc = raw[pos + 8 + length:pos + 12 + length]
        if len(body) < length or len(crc) < 4:
            raise ImageFormatError(f"truncated PNG chunk {ctype!r}")
        if zlib.crc32(ctype + body) != struct.unpack(">I", crc)[0]:
            raise ImageFormatError(f"PNG chunk {ctype!r} fails its CRC")
        pos += 12 + length
        if ctype == b"IHDR":
            header = struct.unpack(">IIBBBBB", body)
        elif ctype == b"IDAT":
            idat.append(body)
        elif ctype == b"IEND":
            break
    if header is None:
        raise ImageFormatError("PNG without IHDR")
    width, height, depth, color, _, _, interlace = header
    if depth != 8:
        raise ImageFormatError(f"unsupported PNG bit depth {depth} (only 8)")
    if color not in (0, 2):
        raise ImageFormatError(f"unsupported PNG color type {color} (gray or RGB only)")
    if interlace:
        raise ImageFormatError("interlaced PNG is not supported")
    channels = 3 if color == 2 else 1
    try:
        data = zlib.decompress(b"".join(idat))
    except zlib.error as exc:
        raise ImageFormatError(f"corrupt PNG image data: {exc}") from exc
    pixels = _unfilter(data, height, width * channels, channels)
    return _buffer(pixels.reshape(height, width, channels))


def _chunk(ctype: bytes, body: bytes) -> bytes:
    return struct.pack(">I", len(body)) + ctype + body + struct.pack(">I", zlib.crc32(ctype + body))


def encode_png(img: ImageBuffer) -> bytes:
    if img.channels not in (1, 3):
        raise ValueError(f"PNG output needs 1 or 3 channels, got {img.channels}")
    pixels = to_uint8(img.data).reshape(img.height, -1)
    rows = np.concatenate([np.zeros((img.height, 1), np.uint8), pixels], axis=1)
    ihdr = struct.pack(">IIBBBBB", img.width, img.height, 8, 2 if img.channels == 3 else 0, 0, 0, 0)
    return (PNG_SIGNATURE + _chunk(b"IHDR", ihdr)
            + _chunk(b"IDAT", zlib.compress(rows.tobytes(), 6)) + _chunk(b"IEND", b""))


# ---------------------------------------------------------------------------
# file helpers

def decode_image(raw: bytes) -> ImageBuffer:
    if raw[:8] == PNG_SIGNATURE:
        return decode_png(raw)
    if raw[:2] in (b"P5", b"P6"):
        return decode_netpbm(raw)
    raise ImageFormatError("unrecognized image format (expected PPM, PGM or PNG)")


def load_image(path: str | os.PathLike) -> ImageBuffer:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise ImageFormatError(f"cannot read {path}: {exc.strerror}") from exc
    try:
        return decode_image(raw)
    except ImageFormatError as exc:
        raise ImageFormatError(f"{path}: {exc}") from exc


def save_image(img: ImageBuffer, path: str | os.PathLike) -> None:
    """Format follows the extension (.png, otherwise Netpbm)."""
    if img.space not in ("RGB", "Y"):
        raise ValueError(f"only RGB or Y images can be saved, got {img.space}")
    ext = Path(path).suffix.lower()
    data = encode_png(img) if ext == ".png" else encode_netpbm(img)
    atomic_write_bytes(path, data)


def is_image_path(path: str | os.PathLike) -> bool:
    return Path(path).suffix.lower() in _NETPBM_EXT | {".png"}
