"""Wavelet filter bank: Haar initialization values, perfect reconstruction,
energy conservation, and the learnable wrapper's identity-at-init property."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dlen import tensor as T
from dlen import wavelet
from dlen.tensor import Prng, Tensor


def _taps():
    params = {}
    wavelet.init_wavelet_taps(params, "w")
    return params["w.h0"], params["w.h1"]


def test_haar_tap_values():
    h0, h1 = _taps()
    s = 1.0 / np.sqrt(2.0)
    np.testing.assert_allclose(h0.data, [s, s], atol=1e-7)
    np.testing.assert_allclose(h1.data, [s, -s], atol=1e-7)


def test_subband_kernels_at_init_are_haar_outer_products():
    h0, h1 = _taps()
    k = wavelet.build_subband_kernels(h0, h1).data  # [4,1,2,2] ll/lh/hl/hh
    np.testing.assert_allclose(k[0, 0], 0.5 * np.ones((2, 2)), atol=1e-7)
    np.testing.assert_allclose(k[1, 0], 0.5 * np.array([[1, -1], [1, -1]]), atol=1e-7)
    np.testing.assert_allclose(k[2, 0], 0.5 * np.array([[1, 1], [-1, -1]]), atol=1e-7)
    np.testing.assert_allclose(k[3, 0], 0.5 * np.array([[1, -1], [-1, 1]]), atol=1e-7)


def test_dwt_of_constant_image_concentrates_in_ll():
    h0, h1 = _taps()
    x = Tensor(np.full((1, 2, 4, 4), 3.0, dtype=np.float32))
    sub = wavelet.dwt2d(x, h0, h1)
    np.testing.assert_allclose(sub.ll.data, 6.0, atol=1e-5)  # 4 * 3 * 0.5
    for s in (sub.lh, sub.hl, sub.hh):
        np.testing.assert_allclose(s.data, 0.0, atol=1e-5)


def test_dwt_halves_spatial_extent():
    h0, h1 = _taps()
    sub = wavelet.dwt2d(Tensor(np.zeros((2, 3, 10, 6), dtype=np.float32)), h0, h1)
    assert sub.ll.shape == (2, 3, 5, 3)


def test_perfect_reconstruction_float32_and_float64():
    h0, h1 = _taps()
    rng = Prng(5)
    x32 = Tensor(rng.normal((2, 3, 8, 12), dtype=np.float32))
    rec32 = wavelet.idwt2d(wavelet.dwt2d(x32, h0, h1), h0, h1)
    assert np.abs(rec32.data - x32.data).max() < 1e-5
    with T.autocast64():
        p64 = {}
        wavelet.init_wavelet_taps(p64, "w")
        x64 = Tensor(rng.normal((2, 3, 8, 12)), dtype=np.float64)
        rec64 = wavelet.idwt2d(wavelet.dwt2d(x64, p64["w.h0"], p64["w.h1"]),
                               p64["w.h0"], p64["w.h1"])
    assert np.abs(rec64.data - x64.data).max() < 1e-10


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2 ** 32), st.integers(1, 6), st.integers(1, 6))
def test_energy_conservation_property(seed, hh, ww):
    h0, h1 = _taps()
    x = Tensor(Prng(seed).normal((1, 2, 2 * hh, 2 * ww), dtype=np.float32))
    sub = wavelet.dwt2d(x, h0, h1)
    ex = float(np.sum(x.data.astype(np.float64) ** 2))
    es = sum(float(np.sum(s.data.astype(np.float64) ** 2)) for s in sub.as_list())
    assert abs(ex - es) <= 1e-4 * max(ex, 1e-12)


def test_lwn_is_identity_at_init():
    params = {}
    wavelet.init_lwn(params, "lwn", 4, Prng(9))
    x = Tensor(Prng(1).normal((2, 4, 8, 8), dtype=np.float32))
    y = wavelet.lwn_forward(x, params, "lwn")
    np.testing.assert_allclose(y.data, x.data, atol=1e-5)


@pytest.mark.parametrize("h,w", [(2, 2), (3, 5), (7, 8), (9, 9)])
def test_lwn_preserves_odd_shapes(h, w):
    params = {}
    wavelet.init_lwn(params, "lwn", 3, Prng(2))
    x = Tensor(Prng(3).normal((1, 3, h, w), dtype=np.float32))
    assert wavelet.lwn_forward(x, params, "lwn").shape == (1, 3, h, w)


def test_wavelet_taps_receive_gradient_when_perturbed():
    with T.autocast64():
        params = {}
        wavelet.init_lwn(params, "lwn", 2, Prng(4))
        for p in params.values():
            if not np.any(p.data):
                p.data = p.data + Prng(8).normal(p.shape, std=0.05, dtype=np.float64)
        x = Tensor(Prng(5).normal((1, 2, 4, 4)), dtype=np.float64)
        y = wavelet.lwn_forward(x, params, "lwn")
        T.reduce_sum(T.mul(y, y)).backward()
    assert params["lwn.h0"].grad is not None
    assert np.abs(params["lwn.h0"].grad).max() > 0
