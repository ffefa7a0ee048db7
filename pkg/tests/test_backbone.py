import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fdplc import backbone, dsp
from fdplc.backbone import BackboneConfig, Decoder, Encoder, GGRUBlock, LatentSequence, TCMBlock, TCMLadder
from fdplc.diffcore import GroupGRU, Tensor
from fdplc.errors import ConfigError, ContractError


@pytest.fixture(scope="module")
def codec():
    rng = np.random.default_rng(0)
    cfg = BackboneConfig()
    return Encoder(cfg, rng), Decoder(cfg, rng)


def test_one_second_gives_197_frames(codec):
    enc, _ = codec
    x = np.random.default_rng(1).normal(size=16000) * 0.1
    lat = backbone.encode(enc, x)
    assert lat.role == backbone.ROLE_PRE
    assert lat.frames.shape == (1, 197, 32)


def test_zero_clip_is_finite(codec):
    enc, dec = codec
    lat = backbone.encode(enc, np.zeros(1600))
    assert np.all(np.isfinite(lat.frames.data)) and np.abs(lat.frames.data).max() < 10
    y = backbone.decode(dec, LatentSequence(lat.frames, backbone.ROLE_QUANTIZED), 1600)
    assert y.shape == (1, 1600) and np.all(np.isfinite(y.data))


def test_decoder_rejects_prequantization_latents(codec):
    enc, dec = codec
    lat = backbone.encode(enc, np.zeros(800))
    with pytest.raises(ContractError):
        backbone.decode(dec, lat, 800)


def test_encoder_prefix_causality(codec):
    enc, _ = codec
    x = np.random.default_rng(2).normal(size=4000) * 0.1
    full = backbone.encode(enc, x).frames.data
    prefix = backbone.encode(enc, x[:2000]).frames.data
    assert np.allclose(prefix, full[:, :prefix.shape[1]], atol=1e-10)


def test_encoder_future_perturbation_bitwise(codec):
    enc, _ = codec
    rng = np.random.default_rng(3)
    x = rng.normal(size=4000) * 0.1
    base = backbone.encode(enc, x).frames.data
    t = 20  # frame t covers samples [80 t, 80 t + 320)
    x2 = x.copy()
    x2[80 * t + 320:] += rng.normal(size=x2[80 * t + 320:].shape)
    out = backbone.encode(enc, x2).frames.data
    assert np.array_equal(out[:, :t + 1], base[:, :t + 1])
    assert not np.array_equal(out[:, t + 1:], base[:, t + 1:])


def test_decoder_future_perturbation_bitwise(codec):
    _, dec = codec
    rng = np.random.default_rng(4)
    lat = rng.normal(size=(1, 40, 32))
    base = dec(Tensor(lat), backbone.output_length(40)).data
    t = 25
    lat2 = lat.copy()
    lat2[:, t:] += 1.0
    out = dec(Tensor(lat2), backbone.output_length(40)).data
    # samples before 80 t are synthesized from frames < t only
    assert np.array_equal(out[:, :80 * t], base[:, :80 * t])
    assert not np.array_equal(out[:, 80 * t:], base[:, 80 * t:])


def test_decoder_prefix_reproduction(codec):
    _, dec = codec
    lat = np.random.default_rng(5).normal(size=(1, 30, 32))
    full = dec(Tensor(lat), backbone.output_length(30)).data
    t = 12
    part = dec(Tensor(lat[:, :t]), backbone.output_length(t)).data
    margin = 320 - 80  # tail samples of the last frame still await overlap-add
    n = backbone.output_length(t) - margin
    assert n == 80 * t
    assert np.allclose(part[:, :n], full[:, :n], atol=1e-10)


def test_tcm_zero_expand_is_identity():
    rng = np.random.default_rng(6)
    block = TCMBlock(8, 4, 3, 2, rng, zero_expand=True)
    x = Tensor(rng.normal(size=(2, 10, 8)))
    assert np.array_equal(block(x).data, x.data)


def test_tcm_ladder_receptive_field_31():
    rng = np.random.default_rng(7)
    ladder = TCMLadder(8, 4, 3, (1, 2, 4, 8), rng)
    assert ladder.receptive_field == 31
    x = rng.normal(size=(1, 50, 8))
    base = ladder(Tensor(x)).data
    x2 = x.copy()
    x2[:, 5] += 1.0
    out = ladder(Tensor(x2)).data
    changed = np.any(out != base, axis=(0, 2))
    assert not changed[:5].any()
    assert changed[5 + 30]
    assert not changed[5 + 31:].any()


def test_tcm_causality_next_frame():
    rng = np.random.default_rng(8)
    block = TCMBlock(6, 4, 3, 4, rng)
    x = rng.normal(size=(1, 12, 6))
    base = block(Tensor(x)).data
    x[:, 7] += 1.0
    assert np.array_equal(block(Tensor(x)).data[:, :7], base[:, :7])


@settings(max_examples=15, deadline=None)
@given(st.sampled_from([1, 2, 4, 8]), st.integers(0, 10))
def test_ggru_group_isolation(groups, seed):
    rng = np.random.default_rng(seed)
    block = GGRUBlock(16, groups, rng)
    x = rng.normal(size=(1, 6, 16))
    base = block(Tensor(x)).data
    d = 16 // groups
    x[:, :, :d] += rng.normal(size=(1, 6, d))
    out = block(Tensor(x)).data
    assert np.array_equal(out[..., d:], base[..., d:])


def test_ggru_streaming_and_degenerate_grouping():
    rng = np.random.default_rng(9)
    block = GGRUBlock(8, 2, rng)
    x = rng.normal(size=(1, 9, 8))
    full, _ = backbone.ggru_block(block, Tensor(x))
    state = None
    for t in range(9):
        y, state = backbone.ggru_block(block, Tensor(x[:, t:t + 1]), state)
        assert np.allclose(y.data[:, 0], full.data[:, t], atol=1e-6)
    single = GroupGRU(8, 1, np.random.default_rng(10))
    assert single.w_hid.shape == (1, 3, 8, 8)
    with pytest.raises(ConfigError):
        GroupGRU(10, 4, rng)
    with pytest.raises(ConfigError):
        BackboneConfig(latent_channels=30, gru_groups=4)


def test_shape_contract(codec):
    enc, dec = codec
    assert BackboneConfig().freq_sizes == [161, 81, 41, 21]
    n = 2400
    lat = backbone.encode(enc, np.random.default_rng(11).normal(size=n))
    T = dsp.CODEC_GRID.n_frames(n)
    assert lat.frames.shape[1] == T
    spec = dec.spectrum(lat.frames)
    assert spec.shape == (1, T, 161, 2)
