import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fdplc import vq
from fdplc.diffcore import Tensor
from fdplc.errors import ConfigError, CorruptBitstream, FormatError
from fdplc.vq import GroupVQ, PacketPayload


def small_vq(channels=2, groups=2, codewords=8, seed=0):
    return GroupVQ(channels, groups, codewords, np.random.default_rng(seed))


def test_hand_distance_example():
    q = GroupVQ(1, 2, 2, np.random.default_rng(0))
    for book in q.books:
        book.data = np.array([[0.0, 0.0], [1.0, 1.0]])
    latents = np.array([[[0.9], [0.8], [0.9], [0.8]]])  # one superframe, both groups see (0.9, 0.8)
    res = q.quantize(latents)
    assert res.indices.tolist() == [[[1, 1]]]


def test_exact_match_gives_zero_residual():
    q = small_vq()
    j = 5
    sf = np.concatenate([q.books[0].data[j], q.books[1].data[j]])
    res = q.quantize(sf.reshape(1, 4, 2))
    assert res.indices[0, 0].tolist() == [j, j]
    assert np.array_equal(res.quantized.data.reshape(-1), sf)


def test_nearest_matches_brute_force():
    q = small_vq(channels=3, groups=4, codewords=16, seed=1)
    x = np.random.default_rng(2).normal(size=(2, 12, 3))
    res = q.quantize(x)
    sf = x.reshape(2, 3, 12)
    for g, book in enumerate(q.books):
        a, b = q.offsets[g], q.offsets[g + 1]
        d = ((sf[..., None, a:b] - book.data) ** 2).sum(-1)
        assert np.array_equal(res.indices[..., g], d.argmin(-1))
        chosen = np.take_along_axis(d, res.indices[..., g:g + 1], -1)[..., 0]
        assert np.all(chosen <= d.min(-1))


def test_ties_break_to_lowest_index():
    q = GroupVQ(1, 1, 4, np.random.default_rng(0))
    q.books[0].data = np.array([[1.0] * 4, [0.0] * 4, [0.0] * 4, [-1.0] * 4])
    assert q.nearest(np.zeros((1, 4)))[0, 0] == 1


def test_dequantize_round_trip_and_membership():
    q = small_vq(seed=3)
    x = np.random.default_rng(4).normal(size=(1, 10, 2))
    res = q.quantize(x)
    assert res.tail_pad == 2
    assert np.array_equal(q.dequantize(res.indices, 10), res.quantized.data)
    idx = np.random.default_rng(5).integers(0, 8, size=(6, 2))
    out = q.dequantize(idx).reshape(6, -1)
    for p in range(6):
        for g, book in enumerate(q.books):
            assert np.array_equal(out[p, q.offsets[g]:q.offsets[g + 1]], book.data[idx[p, g]])
    for book in q.books:
        book.data = np.zeros_like(book.data)
    assert np.all(q.dequantize(idx) == 0)
    with pytest.raises(CorruptBitstream):
        q.dequantize(np.array([[0, 8]]))


def test_codebook_config_errors():
    with pytest.raises(ConfigError):
        GroupVQ(2, 2, 0, np.random.default_rng(0))
    with pytest.raises(ConfigError):
        GroupVQ(2, 2, 6, np.random.default_rng(0))


def test_straight_through_gradient():
    q = small_vq(seed=6)
    x = Tensor(np.random.default_rng(7).normal(size=(1, 7, 2)), requires_grad=True)
    w = np.random.default_rng(8).normal(size=(1, 7, 2))
    res = q.quantize(x)
    (res.quantized * Tensor(w)).sum().backward()
    assert np.allclose(x.grad, w)


def test_straight_through_finite_difference_with_fixed_assignment():
    q = small_vq(seed=9)
    x = np.random.default_rng(10).normal(size=(1, 8, 2))
    idx = q.quantize(x).indices
    w = np.random.default_rng(11).normal(size=x.shape)
    xt = Tensor(x, requires_grad=True)
    (q.quantize(xt).quantized * Tensor(w)).sum().backward()
    # forward value with the assignment frozen and the residual held constant: v + sg(q - x)
    residual = q.dequantize(idx, 8) - x

    def surrogate(v):
        return float((w * (v + residual)).sum())

    eps = 1e-6
    fd = np.zeros(x.size)
    for i in range(x.size):
        hi, lo = x.copy().reshape(-1), x.copy().reshape(-1)
        hi[i] += eps
        lo[i] -= eps
        fd[i] = (surrogate(hi.reshape(x.shape)) - surrogate(lo.reshape(x.shape))) / (2 * eps)
        assert np.array_equal(q.quantize(hi.reshape(x.shape)).indices, idx)
    assert np.allclose(xt.grad.reshape(-1), fd, atol=1e-6)


def test_6kbps_config():
    q = GroupVQ(32, 12, 1024, np.random.default_rng(0))
    assert q.bitrate == 6000.0
    assert sum(q.dims) == 128
    assert vq.bytes_per_packet(12, 10) == 15


def test_bitrate_arithmetic():
    assert vq.bitrate_of(12, 1024) == 6000
    assert vq.bitrate_of(1, 2) == 50
    for g in (1, 5, 12):
        assert vq.bitrate_of(g, 512) - vq.bitrate_of(g, 256) == pytest.approx(g / 0.02)


def test_pack_empty_and_round_trip():
    assert vq.pack([], 12, 10) == b""
    assert vq.unpack(b"", 12, 10) == []
    rng = np.random.default_rng(12)
    idx = rng.integers(0, 1024, size=(10_000, 12))
    payloads = vq.payloads_from_indices(idx)
    blob = vq.pack(payloads, 12, 10)
    assert len(blob) == 10_000 * 15
    assert vq.unpack(blob, 12, 10) == payloads


def test_pack_is_msb_first():
    blob = vq.pack([PacketPayload(0, (1, 0))], 2, 3)
    assert blob == bytes([0b00100000])


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 16), st.integers(1, 12), st.integers(0, 20), st.integers(0, 10_000))
def test_pack_unpack_bijection(groups, bits, n, seed):
    idx = np.random.default_rng(seed).integers(0, 1 << bits, size=(n, groups))
    payloads = vq.payloads_from_indices(idx)
    blob = vq.pack(payloads, groups, bits)
    assert vq.unpack(blob, groups, bits) == payloads
    assert vq.pack(vq.unpack(blob, groups, bits), groups, bits) == blob


def test_truncated_stream_reports_offset():
    blob = vq.pack(vq.payloads_from_indices(np.ones((3, 12), dtype=int)), 12, 10)
    with pytest.raises(CorruptBitstream) as info:
        vq.unpack(blob[:-4], 12, 10)
    assert info.value.offset == 30


def test_bitstream_file(tmp_path):
    header = vq.BitstreamHeader(12, 10, 32, 16000, 16000, 197, 3)
    idx = np.random.default_rng(13).integers(0, 1024, size=(50, 12))
    path = tmp_path / "a.fdpc"
    vq.write_bitstream(path, header, vq.payloads_from_indices(idx))
    blob = path.read_bytes()
    assert blob[:4] == b"FDPC" and blob[4] == 1
    h2, payloads = vq.read_bitstream(path)
    assert h2 == header and np.array_equal(vq.indices_from_payloads(payloads), idx)
    (tmp_path / "b.fdpc").write_bytes(b"FDPX" + blob[4:])
    with pytest.raises(FormatError):
        vq.read_bitstream(tmp_path / "b.fdpc")
    (tmp_path / "c.fdpc").write_bytes(blob[:-1])
    with pytest.raises(CorruptBitstream):
        vq.read_bitstream(tmp_path / "c.fdpc")


def test_kmeans_init_reduces_distortion():
    q = small_vq(codewords=4, seed=14)
    rng = np.random.default_rng(15)
    centers = rng.normal(scale=3.0, size=(4, 8))
    data = np.repeat(centers, 25, axis=0) + rng.normal(scale=0.05, size=(100, 8))

    def distortion():
        res = q.quantize(data.reshape(1, -1, 2))
        return float(((res.quantized.data.reshape(-1, 8) - data) ** 2).mean())

    before = distortion()
    q.kmeans_init(data, np.random.default_rng(16))
    after = distortion()
    assert after < 0.5 * before
    for g, book in enumerate(q.books):  # every codeword sits inside the data's range
        x = data[:, q.offsets[g]:q.offsets[g + 1]]
        assert np.all(book.data >= x.min(0) - 1e-9) and np.all(book.data <= x.max(0) + 1e-9)
