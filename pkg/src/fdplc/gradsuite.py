"""Finite-difference checks for every differentiable primitive, layer and loss.

Each check builds small float64 inputs from a seeded generator and returns the
relative error between autodiff and central differences.
"""
import numpy as np

from . import dsp, ganloss
from .diffcore import functional as F
from .diffcore import nn
from .diffcore import tensor as T
from .diffcore.gradcheck import check_gradients
from .diffcore.tensor import Tensor
from .ganloss import BalancedFrameSet, Discriminators, LossWeights

TOLERANCE = 1e-5


def _leaf(rng, *shape, low=None, high=None):
    data = rng.uniform(low, high, size=shape) if low is not None else rng.normal(size=shape)
    return Tensor(data, requires_grad=True)


def _elementwise(rng):
    a = _leaf(rng, 3, 4)
    b = _leaf(rng, 3, 4)
    pos = _leaf(rng, 3, 4, low=0.5, high=2.0)
    idx = np.array([2, 0, 2, 1])
    table = _leaf(rng, 3, 5)
    mat = Tensor(rng.normal(size=(4, 2)))
    checks = {
        "add": lambda: a + b,
        "sub": lambda: a - b,
        "mul": lambda: a * b,
        "div": lambda: a / pos,
        "maximum": lambda: T.maximum(a, b),
        "matmul": lambda: a @ mat + (a.reshape(3, 4, 1) @ b.reshape(3, 1, 4)).sum(),
        "power": lambda: pos ** 1.7,
        "exp": lambda: a.exp(),
        "log": lambda: pos.log(),
        "log_clamped": lambda: T.log_clamped(pos, 1e-3),
        "sqrt": lambda: T.sqrt(pos),
        "abs": lambda: (a + 0.05).abs(),
        "tanh": lambda: a.tanh(),
        "sigmoid": lambda: a.sigmoid(),
        "gelu": lambda: T.gelu(a),
        "leaky_relu": lambda: T.leaky_relu(a),
        "sum_mean": lambda: a.sum(axis=1) + b.mean(axis=1),
        "reshape_transpose": lambda: a.reshape(4, 3).transpose((1, 0)),
        "getitem": lambda: a[1:, ::2] + a[np.array([0, 2])][:, 1:3],
        "concat_stack": lambda: T.concat([a, b], axis=0) + T.stack([a, b], axis=0).reshape(6, 4),
        "pad": lambda: T.pad(a, ((1, 0), (0, 2))),
        "where": lambda: T.where(a.data > 0, a, b),
        "take_rows": lambda: T.take_rows(table, idx),
    }
    out = {}
    for name, fn in checks.items():
        w = rng.normal(size=fn().shape)
        leaves = [a, b, pos, table]
        out[name] = check_gradients(lambda: (fn() * Tensor(w)).sum(), leaves)
    return out


def _fixed_weight(fn, rng):
    """Random linear functional of ``fn()`` so every output entry matters."""
    shape = fn().shape
    w = Tensor(rng.normal(size=shape))
    return lambda: (fn() * w).sum()


def _primitives(rng):
    out = {}
    x = _leaf(rng, 2, 5, 9, 3)
    w = _leaf(rng, 2, 3, 3, 4)
    b = _leaf(rng, 4)
    out["conv2d_causal_stride_f2"] = check_gradients(_fixed_weight(lambda: F.conv2d(x, w, b, (1, 2)), rng), [x, w, b])
    out["conv2d_same_stride_22"] = check_gradients(
        _fixed_weight(lambda: F.conv2d(x, w, b, (2, 2), (1, 1), (1, 1)), rng), [x, w, b])
    wide_x = _leaf(rng, 1, 4, 7, 9)
    wide_w = _leaf(rng, 2, 5, 9, 3)
    out["conv2d_wide"] = check_gradients(
        _fixed_weight(lambda: F.conv2d(wide_x, wide_w, None, (1, 2), (1, 0), (2, 2)), rng), [wide_x, wide_w])
    seq = _leaf(rng, 2, 7, 3)
    cw = _leaf(rng, 3, 3, 4)
    cb = _leaf(rng, 4)
    out["causal_conv1d"] = check_gradients(_fixed_weight(lambda: F.causal_conv1d(seq, cw, cb, dilation=2), rng), [seq, cw, cb])
    dw = _leaf(rng, 3, 3)
    db = _leaf(rng, 3)
    out["depthwise_conv1d"] = check_gradients(_fixed_weight(lambda: F.depthwise_conv1d(seq, dw, db, dilation=2), rng),
                                              [seq, dw, db])
    grid = _leaf(rng, 2, 3, 4, 2)
    out["upsample_freq"] = check_gradients(_fixed_weight(lambda: F.upsample_freq(grid, 2), rng), [grid])
    out["standardize"] = check_gradients(_fixed_weight(lambda: F.standardize(grid, axes=(1, 2)), rng), [grid])
    G, d = 2, 3
    gi = _leaf(rng, 2, 5, G, 3, d)
    wh = Tensor(0.5 * rng.normal(size=(G, 3, d, d)), requires_grad=True)
    bh = _leaf(rng, G, 3, d)
    h0 = _leaf(rng, 2, G, d)
    out["gru_scan"] = check_gradients(_fixed_weight(lambda: F.gru_scan(gi, wh, bh, h0), rng), [gi, wh, bh, h0])
    q, k, v = (_leaf(rng, 2, 6, 2, 3) for _ in range(3))
    out["window_attention"] = check_gradients(_fixed_weight(lambda: F.window_attention(q, k, v, 3), rng), [q, k, v])
    re, im = _leaf(rng, 3, 4), _leaf(rng, 3, 4)
    out["complex_abs"] = check_gradients(_fixed_weight(lambda: F.complex_abs(re, im), rng), [re, im])
    mag = _leaf(rng, 3, 4, low=0.2, high=2.0)
    out["power_law"] = check_gradients(_fixed_weight(lambda: F.power_law(mag, 0.3), rng), [mag])
    sig = _leaf(rng, 2, 23)
    out["frame_signal"] = check_gradients(_fixed_weight(lambda: F.frame_signal(sig, 8, 3), rng), [sig])
    frames = _leaf(rng, 2, 4, 8)
    out["overlap_add"] = check_gradients(_fixed_weight(lambda: F.overlap_add(frames, 2, 13), rng), [frames])
    fr = _leaf(rng, 2, 3, 10)
    out["rfft_frames"] = check_gradients(
        _fixed_weight(lambda: T.concat(list(F.rfft_frames(fr, 12)), axis=-1), rng), [fr])
    hre, him = _leaf(rng, 2, 3, 7), _leaf(rng, 2, 3, 7)
    out["irfft_frames"] = check_gradients(_fixed_weight(lambda: F.irfft_frames(hre, him, 12), rng), [hre, him])
    x_sig = _leaf(rng, 1, 720)
    out["stft_istft"] = check_gradients(
        _fixed_weight(lambda: dsp.istft_tensor(*dsp.stft_tensor(x_sig), 720), rng), [x_sig])
    return out


def _layers(rng):
    out = {}
    x = _leaf(rng, 1, 4, 7, 3)
    sn_conv = nn.Conv2d(3, 4, (3, 3), (2, 2), rng, (1, 1), (1, 1), spectral_norm=True)
    sn_conv.eval()  # fixed u, v so the map is a deterministic function of the weight
    out["conv2d_spectral_norm"] = check_gradients(_fixed_weight(lambda: sn_conv(x), rng),
                                                  [x, sn_conv.weight, sn_conv.bias])
    deconv = nn.FreqDeconv2d(3, 2, (2, 3), rng)
    out["freq_deconv2d"] = check_gradients(_fixed_weight(lambda: deconv(x), rng),
                                           [x, deconv.conv.weight, deconv.conv.bias])
    inorm = nn.InstanceNorm(3, per_frame=True)
    out["instance_norm_per_frame"] = check_gradients(_fixed_weight(lambda: inorm(x), rng), [x, inorm.gamma, inorm.beta])
    seq = _leaf(rng, 2, 6, 8)
    ln = nn.LayerNorm(8)
    out["layer_norm"] = check_gradients(_fixed_weight(lambda: ln(seq), rng), [seq, ln.gamma, ln.beta])
    gru = nn.GroupGRU(8, 2, rng)
    out["group_gru"] = check_gradients(_fixed_weight(lambda: gru(seq)[0], rng), [seq, gru.w_in, gru.w_hid, gru.b_in])
    return out


def _losses(rng):
    out = {}
    # concealment loss
    tgt = rng.normal(size=(2, 6, 4))
    est = _leaf(rng, 2, 6, 4)
    sets = [BalancedFrameSet(np.array([0, 2, 5]), 2, 1), BalancedFrameSet(np.array([1, 4]), 1, 1)]
    out["loss_plc"] = check_gradients(lambda: ganloss.loss_plc(tgt, est, sets), [est])
    # reconstruction losses
    x = 0.3 * rng.normal(size=(1, 1100))
    xh = Tensor(x + 0.1 * rng.normal(size=x.shape), requires_grad=True)
    out["loss_bin"] = check_gradients(lambda: ganloss.loss_bin(x, xh), [xh])
    mel_cfg = dsp.MelConfig(resolutions=((256, 64, 40), (1024, 256, 128)))
    out["loss_mel"] = check_gradients(lambda: ganloss.loss_mel(x, xh, mel_cfg), [xh])
    # adversarial and feature-matching losses through both discriminators (eval mode: fixed spectral-norm vectors)
    disc = Discriminators(rng)
    disc.eval()
    real = 0.3 * rng.normal(size=(1, 800))
    fake = Tensor(0.3 * rng.normal(size=(1, 800)), requires_grad=True)
    real_out = disc(real)
    out["loss_adv_g"] = check_gradients(lambda: ganloss.loss_adv_g(disc(fake)), [fake])
    out["loss_adv_g_nonsat"] = check_gradients(lambda: ganloss.loss_adv_g(disc(fake), non_saturating=True), [fake])
    out["loss_fm"] = check_gradients(
        lambda: ganloss.loss_fm([o.features for o in real_out], [o.features for o in disc(fake)]), [fake])
    d_params = [disc.frame.fc.weight, disc.segment.convs[1].weight, disc.segment.convs[0].weight]
    fake_const = Tensor(fake.data)
    out["loss_adv_d"] = check_gradients(lambda: ganloss.loss_adv_d(disc(real), disc(fake_const)), d_params)
    # weighted total
    w = LossWeights()
    out["loss_total"] = check_gradients(lambda: ganloss.loss_total({
        "plc": ganloss.loss_plc(tgt, est, sets),
        "bin": (est * est).mean(),
        "mel": est.abs().mean(),
        "adv": est.sigmoid().mean(),
        "fm": (est * 2.0).tanh().mean(),
    }, w), [est])
    return out


GROUPS = {
    "elementwise": _elementwise,
    "primitives": _primitives,
    "layers": _layers,
    "losses": _losses,
}


def run_suite(seed=0, groups=None):
    """Return ``{check name: relative error}`` for the selected groups (default: all)."""
    results = {}
    for name in groups or GROUPS:
        results.update(GROUPS[name](np.random.default_rng([seed, list(GROUPS).index(name)])))
    return results
