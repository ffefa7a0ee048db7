import numpy as np
import pytest

from fdplc import kernels
from fdplc.kernels import _numpy as NP

NB = pytest.importorskip("fdplc.kernels._numba")


def gru_inputs(rng, dtype=np.float64, B=2, T=7, G=3, d=4):
    gi = rng.normal(size=(B, T, G, 3, d)).astype(dtype)
    wh = (rng.normal(size=(G, 3, d, d)) * 0.5).astype(dtype)
    bh = rng.normal(size=(G, 3, d)).astype(dtype)
    h0 = rng.normal(size=(B, G, d)).astype(dtype)
    return gi, wh, bh, h0


def test_backend_flag_is_reported():
    assert kernels.BACKEND in ("numba", "numpy")
    assert (kernels.numba_impl is None) == (kernels.BACKEND == "numpy")


def test_gru_scan_agrees():
    rng = np.random.default_rng(0)
    gi, wh, bh, h0 = gru_inputs(rng)
    a = NP.gru_scan_forward(gi, wh, bh, h0)
    b = NB.gru_scan_forward(gi, wh, bh, h0)
    for x, y in zip(a, b):
        assert np.allclose(x, y, atol=1e-12)
    dhs = rng.normal(size=a[0].shape)
    ga = NP.gru_scan_backward(dhs, *a[:1], h0, *a[1:], wh)
    gb = NB.gru_scan_backward(dhs, *b[:1], h0, *b[1:], wh)
    for x, y in zip(ga, gb):
        assert np.allclose(x, y, atol=1e-11)


@pytest.mark.parametrize("window,T", [(1, 5), (4, 9), (32, 40), (8, 3)])
def test_window_attention_agrees(window, T):
    rng = np.random.default_rng(window + T)
    q, k, v = (rng.normal(size=(2, T, 3, 4)) for _ in range(3))
    scale = 0.5
    oa, pa = NP.window_attention_forward(q, k, v, window, scale)
    ob, pb = NB.window_attention_forward(q, k, v, window, scale)
    assert np.allclose(oa, ob, atol=1e-12) and np.allclose(pa, pb, atol=1e-12)
    g = rng.normal(size=oa.shape)
    for x, y in zip(NP.window_attention_backward(g, q, k, v, pa, window, scale),
                    NB.window_attention_backward(g, q, k, v, pb, window, scale)):
        assert np.allclose(x, y, atol=1e-11)


def test_float32_dtype_is_preserved():
    rng = np.random.default_rng(1)
    gi, wh, bh, h0 = gru_inputs(rng, np.float32)
    for impl in (NP, NB):
        assert all(o.dtype == np.float32 for o in impl.gru_scan_forward(gi, wh, bh, h0))
        q = rng.normal(size=(1, 6, 2, 4)).astype(np.float32)
        out, p = impl.window_attention_forward(q, q, q, 4, np.float32(0.5))
        assert out.dtype == np.float32


def test_channel_kernels_agree():
    rng = np.random.default_rng(2)
    lost = rng.random(5000) < 0.6
    for cap in (1, 3, 11):
        assert np.array_equal(NP.cap_bursts(lost, cap), NB.cap_bursts(lost, cap))
    p = rng.uniform(size=(3, 3))
    p /= p.sum(axis=1, keepdims=True)
    cum = np.cumsum(p, axis=1)
    emission = np.array([0.0, 0.4, 1.0])
    u_t, u_e = rng.random(5000), rng.random(5000)
    sa, la = NP.markov_walk(cum, emission, 0, u_t, u_e)
    sb, lb = NB.markov_walk(cum, emission, 0, u_t, u_e)
    assert np.array_equal(sa, sb) and np.array_equal(la, lb)


def test_nearest_codeword_agrees():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(700, 8))
    book = rng.normal(size=(64, 8))
    book[5] = book[9]  # duplicate codeword: both paths must keep the lower index
    x[:3] = book[9]
    a, b = NP.nearest_codeword(x, book), NB.nearest_codeword(x, book)
    assert np.array_equal(a, b) and np.all(a[:3] == 5)
