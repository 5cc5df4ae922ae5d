import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from ylie.analysis import correlation, edge_map
from ylie.autodiff import Tensor, count_flops
from ylie.colorspace import ImageBuffer
from ylie.spectral import (NORM_TAG, Spectrum, fft2, fft2_complex, fftshift2, ifft2, log_spectrum_image,
                           spectrum_swap)

SIZES = [(4, 4), (6, 10), (8, 8)]


def T(a):
    return Tensor(np.asarray(a, dtype=np.float64))


def _edges(plane):
    return edge_map(ImageBuffer(np.asarray(plane, dtype=np.float64)[..., None], "Y"))


def _texture(rng, h, w):
    base = rng.random((h, w))
    for _ in range(3):
        base = (base + np.roll(base, 1, 0) + np.roll(base, 1, 1)) / 3
    return (base - base.min()) / (base.max() - base.min())


def test_constant_image_is_dc_only():
    s = fft2(T(np.full((1, 1, 5, 7), 0.3)))
    expected = np.zeros((5, 7))
    expected[0, 0] = 0.3 * 35
    np.testing.assert_allclose(s.amplitude[0, 0], expected, atol=1e-12)
    assert s.norm == NORM_TAG


def test_unit_impulse_is_flat():
    x = np.zeros((1, 1, 6, 6))
    x[0, 0, 0, 0] = 1
    s = fft2(T(x))
    np.testing.assert_allclose(s.amplitude, 1.0, atol=1e-12)
    np.testing.assert_allclose(s.phase, 0.0, atol=1e-12)


@pytest.mark.parametrize("hw", SIZES + [(1, 1), (3, 5), (16, 32), (17, 64), (7, 1)])
def test_matches_naive_dft(rng, hw):
    x = rng.standard_normal((2, 3) + hw)
    z = oracles.naive_dft2(x)
    got = fft2_complex(x)
    assert np.max(np.abs(got - z)) / np.max(np.abs(z)) < 1e-5
    s = fft2(T(x))
    np.testing.assert_allclose(s.amplitude, np.abs(z), rtol=1e-5, atol=1e-9)
    assert np.max(np.abs(s.complex() - z)) / np.max(np.abs(z)) < 1e-5


@pytest.mark.parametrize("hw", SIZES + [(13, 9), (32, 32)])
def test_parseval(rng, hw):
    x = rng.standard_normal((1, 2) + hw)
    s = fft2(T(x))
    lhs = np.sum(x ** 2)
    rhs = np.sum(s.amplitude ** 2) / (hw[0] * hw[1])
    assert abs(lhs - rhs) / lhs < 1e-5


@pytest.mark.parametrize("hw", SIZES + [(11, 3), (64, 48)])
def test_round_trip(rng, hw):
    x = rng.standard_normal((1, 3) + hw)
    back, residue = ifft2(fft2(T(x)), return_residue=True)
    assert np.max(np.abs(back.data - x)) < 1e-5
    assert residue < 1e-5


def test_round_trip_float32(rng):
    x = rng.random((1, 1, 20, 12)).astype(np.float32)
    back = ifft2(fft2(Tensor(x)))
    assert back.dtype == np.float32
    assert np.max(np.abs(back.data - x)) < 1e-5


def test_zero_spectrum_gives_zero():
    z = np.zeros((1, 1, 4, 6))
    np.testing.assert_array_equal(ifft2(Spectrum(z, z)).data, z)


def test_ifft2_shape_mismatch():
    with pytest.raises(ValueError):
        Spectrum(np.zeros((1, 1, 4, 4)), np.zeros((1, 1, 4, 5)))


def test_cosine_reconstruction():
    H = W = 16
    hh, ww = np.meshgrid(np.arange(H), np.arange(W), indexing="ij")
    x = np.cos(2 * np.pi * (2 * hh / H + 3 * ww / W))
    # closed form: two bins of magnitude HW/2 at (2, 3) and (-2, -3)
    amp = np.zeros((H, W))
    amp[2, 3] = amp[-2, -3] = H * W / 2
    s = fft2(T(x[None, None]))
    np.testing.assert_allclose(s.amplitude[0, 0], amp, atol=1e-9)
    assert abs(s.phase[0, 0, 2, 3]) < 1e-9
    rebuilt = ifft2(Spectrum(amp[None, None], np.zeros((1, 1, H, W))))
    np.testing.assert_allclose(rebuilt.data[0, 0], x, atol=1e-5)


def test_phase_range_and_amplitude_nonnegative(rng):
    x = rng.standard_normal((2, 2, 6, 10))
    x[0, 0] = 1.0  # many zero-amplitude bins
    s = fft2(T(x))
    assert np.all(s.amplitude >= 0)
    assert np.all(s.phase > -np.pi) and np.all(s.phase <= np.pi)
    zero = s.amplitude[0, 0] < 1e-9
    assert zero.sum() == 59
    np.testing.assert_array_equal(s.phase[0, 0][zero], 0.0)


def test_real_negative_bin_has_phase_pi():
    x = np.zeros((1, 1, 1, 2))
    x[0, 0, 0] = [0.0, 1.0]
    s = fft2(T(x))
    assert s.phase[0, 0, 0, 1] == pytest.approx(np.pi)


@given(st.integers(1, 12), st.integers(1, 12), st.integers(0, 2 ** 31))
def test_conjugate_symmetry(h, w, seed):
    x = np.random.default_rng(seed).standard_normal((1, 1, h, w))
    a = fft2(T(x)).amplitude[0, 0]
    mirrored = a[(-np.arange(h)) % h][:, (-np.arange(w)) % w]
    np.testing.assert_allclose(a, mirrored, atol=1e-5 * max(1.0, a.max()))


@given(st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 2 ** 31))
def test_linearity(a, b, seed):
    r = np.random.default_rng(seed)
    x, y = r.standard_normal((2, 1, 1, 6, 10))
    lhs = fft2(T(a * x + b * y)).complex()
    rhs = a * fft2(T(x)).complex() + b * fft2(T(y)).complex()
    assert np.max(np.abs(lhs - rhs)) <= 1e-5 * max(1.0, np.max(np.abs(rhs)))


@given(st.integers(1, 20), st.integers(1, 20), st.integers(0, 2 ** 31))
def test_round_trip_property(h, w, seed):
    x = np.random.default_rng(seed).random((1, 1, h, w))
    assert np.max(np.abs(ifft2(fft2(T(x))).data - x)) < 1e-5


# --- swap --------------------------------------------------------------------

@pytest.mark.parametrize("hw", [(8, 8), (6, 10), (33, 20)])
def test_self_swap_identity(rng, hw):
    x = rng.random((1, 3) + hw)
    out = spectrum_swap(T(x), T(x), clamp=False)
    assert np.max(np.abs(out.data - x)) < 1e-5
    clamped = spectrum_swap(T(x), T(x))
    assert np.all((clamped.data >= 0) & (clamped.data <= 1))


def test_swap_shape_mismatch():
    with pytest.raises(ValueError):
        spectrum_swap(T(np.zeros((1, 1, 4, 4))), T(np.zeros((1, 1, 4, 6))))


def test_swap_with_constant_amplitude_is_flat(rng):
    y = _texture(rng, 32, 32)
    out = spectrum_swap(T(np.full((1, 1, 32, 32), 0.5)), T(y[None, None]), clamp=False).data[0, 0]
    # only the DC bin survives, and the donor DC phase is 0
    np.testing.assert_allclose(out, 0.5, atol=1e-9)


def test_phase_only_reconstruction_follows_phase_donor(rng):
    y = _texture(rng, 32, 32)
    flat = np.zeros((32, 32))
    flat[0, 0] = 1.0
    out = spectrum_swap(T(flat[None, None]), T(y[None, None]), clamp=False).data[0, 0]
    eo = _edges(out)
    assert correlation(eo, _edges(y)) > 0.3
    assert correlation(eo, _edges(flat)) < correlation(eo, _edges(y))


def test_swap_structure_follows_phase_donor():
    wins = 0
    for seed in range(5):
        r = np.random.default_rng(seed)
        a, b = _texture(r, 32, 32), _texture(r, 32, 32)
        out = spectrum_swap(T(a[None, None]), T(b[None, None])).data[0, 0]
        eo = _edges(out)
        wins += correlation(eo, _edges(b)) > correlation(eo, _edges(a))
    assert wins == 5


# --- log spectrum ------------------------------------------------------------

def test_log_spectrum_of_constant_is_one_center_pixel():
    img = log_spectrum_image(T(np.full((1, 1, 8, 10), 0.4)))
    expected = np.zeros((8, 10))
    expected[4, 5] = 1.0
    np.testing.assert_allclose(img[0, 0], expected, atol=1e-12)


def test_log_spectrum_range(rng):
    img = log_spectrum_image(T(rng.random((1, 3, 9, 12))))
    assert img.shape == (1, 3, 9, 12)
    assert img.min(axis=(-2, -1)).tolist() == [[0.0, 0.0, 0.0]]
    assert img.max(axis=(-2, -1)).tolist() == [[1.0, 1.0, 1.0]]


def test_horizontal_stripes_sit_on_vertical_axis():
    H, W = 16, 16
    rows = 0.5 + 0.5 * np.sin(2 * np.pi * 3 * np.arange(H) / H)
    x = np.tile(rows[:, None], (1, W))
    a = fftshift2(fft2(T(x[None, None])).amplitude[0, 0])
    off_axis = a.copy()
    off_axis[:, W // 2] = 0
    assert np.max(off_axis) < 1e-9
    assert a[H // 2 + 3, W // 2] == pytest.approx(H * W / 4)


def test_fft_is_counted():
    with count_flops() as c:
        from ylie.spectral import fft2_polar
        fft2_polar(T(np.zeros((1, 2, 8, 8))))
    assert c.by_kind()["fft"] == 2 * 5 * 64 * 6
