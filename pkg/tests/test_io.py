import hashlib
import io
import os
import struct
import zlib

import numpy as np
import pytest
from PIL import Image

from modelkit import SMALL
from ylie.colorspace import ImageBuffer
from ylie.io import (BadMagicError, CheckpointError, ConfigMismatchError, CRCError, ImageFormatError,
                     ShapeMismatchError, TruncatedError, VersionError, atomic_write_bytes, load_checkpoint,
                     load_image, save_checkpoint, save_image)
from ylie.io.checkpoint import decode_checkpoint, encode_checkpoint
from ylie.io.images import decode_image, decode_png, encode_png, from_uint8, to_uint8
from ylie.model import ModelConfig, init_params

# SMALL config, init seed 0; recorded at first build
GOLDEN_CKPT_SHA256 = "3d7a7a38671efc2259004825f013e04f2e79248e75ce4f763a10e5b12ba8c96d"


def rgb(rng, h=5, w=7):
    return ImageBuffer(rng.random((h, w, 3)).astype(np.float32), "RGB")


# --- quantization --------------------------------------------------------------

def test_round_half_up():
    assert to_uint8(np.array([0.5 / 255, 1.5 / 255, 1.0, 1.2, -0.1])).tolist() == [1, 2, 255, 255, 0]
    assert from_uint8(np.array([0, 51, 255], np.uint8)).tolist() == pytest.approx([0.0, 0.2, 1.0])


# --- Netpbm --------------------------------------------------------------------

def test_p6_fixture():
    payload = bytes(range(0, 240, 20))
    img = decode_image(b"P6\n2 2\n255\n" + payload)
    assert (img.height, img.width, img.channels, img.space) == (2, 2, 3, "RGB")
    expected = np.array(list(payload), dtype=np.float64).reshape(2, 2, 3) / 255
    np.testing.assert_allclose(img.data, expected, atol=1e-7)


def test_p6_header_with_comments():
    img = decode_image(b"P6 # made by hand\n# another\n1 1 255\n\x00\x80\xff")
    np.testing.assert_allclose(img.data[0, 0], [0, 128 / 255, 1], atol=1e-7)


def test_p5_is_luma():
    img = decode_image(b"P5\n3 1\n255\n\x00\x7f\xff")
    assert (img.channels, img.space) == (1, "Y")


@pytest.mark.parametrize("raw,message", [
    (b"P6\n2 2\n255\n" + bytes(11), "truncated payload"),
    (b"P6\n2 2\n65535\n" + bytes(24), "bit depth"),
    (b"P6\n2 x\n255\n", "malformed"),
    (b"P6\n2 2", "truncated Netpbm header"),
    (b"P3\n1 1\n255\n0 0 0", "unrecognized"),
    (b"\x00\x01junk", "unrecognized"),
])
def test_netpbm_errors(raw, message):
    with pytest.raises(ImageFormatError, match=message):
        decode_image(raw)


@pytest.mark.parametrize("ext", [".ppm", ".png"])
def test_save_load_within_half_step(tmp_path, rng, ext):
    img = rgb(rng, 9, 11)
    save_image(img, tmp_path / f"a{ext}")
    back = load_image(tmp_path / f"a{ext}")
    assert back.data.shape == img.data.shape
    assert np.max(np.abs(back.data - img.data)) <= 0.5 / 255 + 1e-7
    save_image(back, tmp_path / f"b{ext}")
    again = load_image(tmp_path / f"b{ext}")
    assert again.data.tobytes() == back.data.tobytes()


def test_gray_save_load(tmp_path, rng):
    img = ImageBuffer(rng.random((4, 6, 1)).astype(np.float32), "Y")
    for ext in (".pgm", ".png"):
        save_image(img, tmp_path / f"g{ext}")
        back = load_image(tmp_path / f"g{ext}")
        assert back.space == "Y"
        assert np.max(np.abs(back.data - img.data)) <= 0.5 / 255 + 1e-7


def test_save_rejects_yuv(tmp_path):
    with pytest.raises(ValueError):
        save_image(ImageBuffer(np.zeros((2, 2, 3)), "YUV"), tmp_path / "x.ppm")


def test_missing_file():
    with pytest.raises(ImageFormatError, match="cannot read"):
        load_image("/nonexistent/file.ppm")


# --- PNG against Pillow ------------------------------------------------------------

@pytest.mark.parametrize("mode", ["RGB", "L"])
def test_png_decoder_matches_pillow(rng, mode):
    shape = (13, 17, 3) if mode == "RGB" else (13, 17)
    pixels = rng.integers(0, 256, shape, dtype=np.uint8)
    buf = io.BytesIO()
    Image.fromarray(pixels, mode).save(buf, format="PNG", optimize=True)
    img = decode_png(buf.getvalue())
    np.testing.assert_array_equal(to_uint8(img.data).reshape(pixels.shape), pixels)


def test_png_decoder_handles_every_filter(rng):
    # Pillow picks adaptive filters per row for photographic content
    base = np.cumsum(rng.integers(0, 4, (32, 32, 3)), axis=1).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(base, "RGB").save(buf, format="PNG", compress_level=9)
    np.testing.assert_array_equal(to_uint8(decode_png(buf.getvalue()).data), base)


def test_png_encoder_readable_by_pillow(rng):
    img = rgb(rng, 6, 9)
    decoded = np.asarray(Image.open(io.BytesIO(encode_png(img))))
    np.testing.assert_array_equal(decoded, to_uint8(img.data))


def test_png_rejects_bad_crc_and_depth(rng):
    raw = bytearray(encode_png(rgb(rng)))
    raw[20] ^= 0xFF
    with pytest.raises(ImageFormatError):
        decode_png(bytes(raw))
    buf = io.BytesIO()
    Image.fromarray(np.zeros((2, 2), np.uint16)).save(buf, format="PNG")
    with pytest.raises(ImageFormatError):
        decode_png(buf.getvalue())


# --- checkpoints -----------------------------------------------------------------------

def test_checkpoint_round_trip_bitwise(tmp_path):
    params = init_params(SMALL, seed=3, zero_heads=False)
    save_checkpoint(params, SMALL, tmp_path / "m.ylie")
    back, cfg = load_checkpoint(tmp_path / "m.ylie")
    assert cfg == SMALL
    assert sorted(back) == sorted(params)
    assert all(back[k].data.tobytes() == params[k].data.tobytes() for k in params)
    assert encode_checkpoint(back, cfg) == (tmp_path / "m.ylie").read_bytes()


def test_checkpoint_layout_by_hand():
    params = init_params(SMALL, seed=0)
    raw = encode_checkpoint(params, SMALL)
    assert raw[:4] == b"YLIE"
    assert struct.unpack("<I", raw[4:8]) == (1,)
    assert struct.unpack("<I", raw[-4:])[0] == zlib.crc32(raw[:-4])
    nfields = struct.unpack("<I", raw[8:12])[0]
    assert nfields == len(SMALL.to_dict())
    (n,) = struct.unpack("<H", raw[12:14])
    assert raw[14:14 + n] == b"feat_y"
    assert raw[14 + n] == 0
    assert struct.unpack("<q", raw[15 + n:23 + n]) == (SMALL.feat_y,)


def test_golden_checkpoint_bytes():
    raw = encode_checkpoint(init_params(SMALL, seed=0), SMALL)
    assert hashlib.sha256(raw).hexdigest() == GOLDEN_CKPT_SHA256


def test_flipped_payload_byte_is_crc_error(tmp_path):
    raw = bytearray(encode_checkpoint(init_params(SMALL, seed=0), SMALL))
    raw[len(raw) // 2] ^= 0x01
    with pytest.raises(CRCError):
        decode_checkpoint(bytes(raw))


def test_error_kinds():
    raw = encode_checkpoint(init_params(SMALL, seed=0), SMALL)
    with pytest.raises(BadMagicError):
        decode_checkpoint(b"XXXX" + raw[4:])
    bumped = raw[:4] + struct.pack("<I", 2) + raw[8:]
    with pytest.raises(VersionError):
        decode_checkpoint(bumped)
    with pytest.raises(TruncatedError):
        decode_checkpoint(raw[:10])
    truncated = raw[:200]
    with pytest.raises(CheckpointError):
        decode_checkpoint(truncated + struct.pack("<I", zlib.crc32(truncated)))
    for err in (BadMagicError, VersionError, CRCError, TruncatedError, ShapeMismatchError, ConfigMismatchError):
        assert issubclass(err, CheckpointError)


def test_config_mismatch_names_first_field():
    raw = encode_checkpoint(init_params(SMALL, seed=0), SMALL)
    with pytest.raises(ConfigMismatchError) as exc:
        decode_checkpoint(raw, SMALL.replace(lsa_k=5, gi_pool=2))
    assert exc.value.field == "lsa_k"
    assert "lsa_k" in str(exc.value)


def test_shape_inconsistency_detected():
    params = init_params(SMALL, seed=0)
    params["gi.lsa.w"] = params["gi.lsa.w"].__class__(np.zeros((3, 3, 1, 1), np.float32))
    with pytest.raises(ShapeMismatchError, match="gi.lsa.w"):
        decode_checkpoint(encode_checkpoint(params, SMALL))
    del params["gi.lsa.w"]
    with pytest.raises(ShapeMismatchError, match="lacks"):
        decode_checkpoint(encode_checkpoint(params, SMALL))


def test_unreadable_checkpoint_path():
    with pytest.raises(CheckpointError):
        load_checkpoint("/nonexistent/m.ylie")


def test_atomic_write_replaces_without_temp_files(tmp_path):
    target = tmp_path / "out.bin"
    atomic_write_bytes(target, b"first")
    atomic_write_bytes(target, b"second")
    assert target.read_bytes() == b"second"
    assert os.listdir(tmp_path) == ["out.bin"]


def test_default_config_checkpoint_size():
    cfg = ModelConfig()
    raw = encode_checkpoint(init_params(cfg), cfg)
    n = sum(t.size for t in init_params(cfg).values())
    assert len(raw) > 4 * n
