"""Fused differentiable primitives with hand-written backward passes.

Layout conventions: sequences are ``(B, T, C)``, time-frequency grids are
``(B, T, F, C)``. Every time-axis operation here is causal unless a padding
argument says otherwise.
"""
import numpy as np
import scipy.fft
from numpy.lib.stride_tricks import sliding_window_view

from .. import kernels
from ..errors import ConfigError, ShapeError
from .tensor import Tensor, make


_IM2COL_MAX_CIN = 8


def conv2d(x, w, bias=None, stride=(1, 1), pad_t=None, pad_f=None):
    """2-D convolution over ``(B, T, F, Cin)`` with kernel ``(kt, kf, Cin, Cout)``.

    ``pad_t`` defaults to causal ``(kt - 1, 0)``; ``pad_f`` defaults to
    ``(kf // 2, kf // 2)`` which, with stride ``s``, gives ``ceil(F / s)``
    output bins for odd ``kf``.
    """
    st, sf = stride
    if st < 1 or sf < 1:
        raise ConfigError(f"stride must be >= 1, got {stride}")
    kt, kf, cin, cout = w.shape
    if x.shape[-1] != cin:
        raise ShapeError(f"conv2d expects {cin} input channels, got {x.shape[-1]}")
    pad_t = (kt - 1, 0) if pad_t is None else pad_t
    pad_f = (kf // 2, kf // 2) if pad_f is None else pad_f
    xd, wd = x.data, w.data
    xp = np.pad(xd, ((0, 0), pad_t, pad_f, (0, 0)))
    B, Tp, Fp, _ = xp.shape
    To = (Tp - kt) // st + 1
    Fo = (Fp - kf) // sf + 1
    if To < 1 or Fo < 1:
        raise ShapeError(f"conv2d input {x.shape} too small for kernel {(kt, kf)}")

    def window(i, j):
        return (slice(None), slice(i, i + st * (To - 1) + 1, st), slice(j, j + sf * (Fo - 1) + 1, sf))

    # narrow inputs: one im2col matmul; wide inputs: one matmul per kernel tap
    im2col = cin < _IM2COL_MAX_CIN
    if im2col:
        patches = sliding_window_view(xp, (kt, kf), axis=(1, 2))[:, ::st, ::sf][:, :To, :Fo]
        cols = np.ascontiguousarray(patches.transpose(0, 1, 2, 4, 5, 3)).reshape(-1, kt * kf * cin)
        wm = wd.reshape(-1, cout)
        out = (cols @ wm).reshape(B, To, Fo, cout)
    else:
        out = np.zeros((B, To, Fo, cout), dtype=xd.dtype)
        for i in range(kt):
            for j in range(kf):
                out += xp[window(i, j)] @ wd[i, j]
    if bias is not None:
        out += bias.data

    def backward(g):
        gx = gw = gb = None
        g2 = g.reshape(-1, cout)
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            if im2col:
                gcols = (g2 @ wm.T).reshape(B, To, Fo, kt, kf, cin)
                for i in range(kt):
                    for j in range(kf):
                        gxp[window(i, j)] += gcols[:, :, :, i, j]
            else:
                for i in range(kt):
                    for j in range(kf):
                        gxp[window(i, j)] += g @ wd[i, j].T
            gx = gxp[:, pad_t[0]:pad_t[0] + xd.shape[1], pad_f[0]:pad_f[0] + xd.shape[2]]
        if w.requires_grad:
            if im2col:
                gw = (cols.T @ g2).reshape(kt, kf, cin, cout)
            else:
                gw = np.empty_like(wd)
                for i in range(kt):
                    for j in range(kf):
                        gw[i, j] = xp[window(i, j)].reshape(-1, cin).T @ g2
        if bias is not None and bias.requires_grad:
            gb = g2.sum(axis=0)
        return gx, gw, gb

    parents = (x, w) if bias is None else (x, w, bias)
    return make(out, parents, backward)


def causal_conv1d(x, w, bias=None, dilation=1):
    """``out[t] = sum_k x[t - dilation*(K-1-k)] @ w[k]`` with zero left padding."""
    if dilation < 1:
        raise ConfigError(f"dilation must be >= 1, got {dilation}")
    K, cin, cout = w.shape
    if x.shape[-1] != cin:
        raise ShapeError(f"causal_conv1d expects {cin} input channels, got {x.shape[-1]}")
    xd, wd = x.data, w.data
    T = xd.shape[1]
    lead = dilation * (K - 1)
    xp = np.pad(xd, ((0, 0), (lead, 0), (0, 0)))
    out = np.zeros(xd.shape[:2] + (cout,), dtype=xd.dtype)
    for k in range(K):
        out += xp[:, k * dilation:k * dilation + T] @ wd[k]
    if bias is not None:
        out += bias.data

    def backward(g):
        gx = gw = gb = None
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            for k in range(K):
                gxp[:, k * dilation:k * dilation + T] += g @ wd[k].T
            gx = gxp[:, lead:]
        if w.requires_grad:
            g2 = g.reshape(-1, cout)
            gw = np.stack([xp[:, k * dilation:k * dilation + T].reshape(-1, cin).T @ g2 for k in range(K)])
        if bias is not None and bias.requires_grad:
            gb = g.reshape(-1, cout).sum(axis=0)
        return gx, gw, gb

    parents = (x, w) if bias is None else (x, w, bias)
    return make(out, parents, backward)


def depthwise_conv1d(x, w, bias=None, dilation=1):
    """Per-channel causal dilated convolution; ``w`` is ``(K, C)``."""
    K, C = w.shape
    if x.shape[-1] != C:
        raise ShapeError(f"depthwise_conv1d expects {C} channels, got {x.shape[-1]}")
    xd, wd = x.data, w.data
    T = xd.shape[1]
    lead = dilation * (K - 1)
    xp = np.pad(xd, ((0, 0), (lead, 0), (0, 0)))
    out = np.zeros_like(xd)
    for k in range(K):
        out += xp[:, k * dilation:k * dilation + T] * wd[k]
    if bias is not None:
        out += bias.data

    def backward(g):
        gx = gw = gb = None
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            for k in range(K):
                gxp[:, k * dilation:k * dilation + T] += g * wd[k]
            gx = gxp[:, lead:]
        if w.requires_grad:
            gw = np.stack([(xp[:, k * dilation:k * dilation + T] * g).sum(axis=(0, 1)) for k in range(K)])
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 1))
        return gx, gw, gb

    parents = (x, w) if bias is None else (x, w, bias)
    return make(out, parents, backward)


def upsample_freq(x, factor=2):
    """Insert ``factor - 1`` zeros between frequency bins: F -> factor*(F-1)+1."""
    B, T, F, C = x.shape
    out = np.zeros((B, T, factor * (F - 1) + 1, C), dtype=x.dtype)
    out[:, :, ::factor] = x.data
    return make(out, (x,), lambda g: (g[:, :, ::factor],))


def standardize(x, axes, eps=1e-5):
    """Zero-mean, unit-variance over ``axes`` (biased variance, ``eps`` in the denominator)."""
    xd = x.data
    mu = xd.mean(axis=axes, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=axes, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y = xc * inv

    def backward(g):
        gm = g.mean(axis=axes, keepdims=True)
        gym = (g * y).mean(axis=axes, keepdims=True)
        return (inv * (g - gm - y * gym),)

    return make(y, (x,), backward)


def gru_scan(gi, wh, bh, h0=None):
    """Run a bank of independent GRUs over time.

    ``gi`` holds precomputed input projections ``(B, T, G, 3, d)`` in
    (reset, update, candidate) order; ``wh`` is ``(G, 3, d, d)`` acting on the
    previous state as a row vector and ``bh`` is ``(G, 3, d)``.
    Returns the state sequence ``(B, T, G, d)``.
    """
    B, T, G, three, d = gi.shape
    if three != 3 or wh.shape != (G, 3, d, d) or bh.shape != (G, 3, d):
        raise ShapeError(f"gru_scan shape mismatch: gi {gi.shape}, wh {wh.shape}, bh {bh.shape}")
    dtype = gi.dtype
    h0_t = h0 if isinstance(h0, Tensor) else Tensor(np.zeros((B, G, d), dtype=dtype) if h0 is None else h0)
    h0d = np.ascontiguousarray(h0_t.data, dtype=dtype)
    whd = np.ascontiguousarray(wh.data, dtype=dtype)
    hs, r, z, n, ghn = kernels.gru_scan_forward(np.ascontiguousarray(gi.data), whd,
                                                np.ascontiguousarray(bh.data, dtype=dtype), h0d)

    def backward(g):
        dgi, dwh, dbh, dh0 = kernels.gru_scan_backward(np.ascontiguousarray(g, dtype=dtype), hs, h0d, r, z, n, ghn, whd)
        return dgi, dwh, dbh, dh0

    return make(hs, (gi, wh, bh, h0_t), backward)


def window_attention(q, k, v, window, return_weights=False):
    """Multi-head attention where query ``t`` sees keys ``max(0, t-window+1) .. t``.

    Inputs are ``(B, T, H, d)``; scores are scaled by ``1/sqrt(d)``. The weights
    array is ``(B, T, H, window)`` with slot ``n`` holding key ``t - window + 1 + n``.
    """
    if window < 1:
        raise ConfigError(f"attention window must be >= 1, got {window}")
    if not (q.shape == k.shape == v.shape):
        raise ShapeError(f"q/k/v shapes differ: {q.shape}, {k.shape}, {v.shape}")
    scale = q.dtype.type(1.0 / np.sqrt(q.shape[-1]))
    qd, kd, vd = (np.ascontiguousarray(t.data) for t in (q, k, v))
    out, p = kernels.window_attention_forward(qd, kd, vd, window, scale)

    def backward(g):
        return kernels.window_attention_backward(np.ascontiguousarray(g), qd, kd, vd, p, window, scale)

    result = make(out, (q, k, v), backward)
    return (result, p) if return_weights else result


def complex_abs(re, im):
    mag = np.sqrt(re.data * re.data + im.data * im.data)
    safe = np.where(mag > 0, mag, 1.0)

    def backward(g):
        scale = np.where(mag > 0, g / safe, 0.0)
        return scale * re.data, scale * im.data

    return make(mag, (re, im), backward)


def power_law(mag, p, grad_floor=1e-6):
    """``mag ** p``; the derivative is evaluated at ``max(mag, grad_floor)`` to stay finite at 0."""
    out = mag.data ** p

    def backward(g):
        return (g * p * np.maximum(mag.data, grad_floor) ** (p - 1.0),)

    return make(out, (mag,), backward)


def frame_signal(x, window, hop):
    """``(B, L) -> (B, T, window)`` with ``T = (L - window) // hop + 1``."""
    xd = x.data
    L = xd.shape[-1]
    T = (L - window) // hop + 1
    frames = sliding_window_view(xd, window, axis=-1)[..., ::hop, :][..., :T, :].copy()

    def backward(g):
        full = _overlap_add_array(g, hop)
        out = np.zeros_like(xd)
        out[..., :full.shape[-1]] = full
        return (out,)

    return make(frames, (x,), backward)


def _overlap_add_array(frames, hop):
    *lead, T, N = frames.shape
    span = (T - 1) * hop + N
    if N % hop == 0:
        r = N // hop
        blocks = np.zeros(tuple(lead) + (T + r - 1, hop), dtype=frames.dtype)
        parts = frames.reshape(tuple(lead) + (T, r, hop))
        for j in range(r):
            blocks[..., j:j + T, :] += parts[..., j, :]
        return blocks.reshape(tuple(lead) + (span,))
    out = np.zeros(tuple(lead) + (span,), dtype=frames.dtype)
    for t in range(T):
        out[..., t * hop:t * hop + N] += frames[..., t, :]
    return out


def overlap_add(frames, hop, length):
    """Sum ``(B, T, N)`` frames at stride ``hop`` into ``(B, length)`` (zero-padded or trimmed)."""
    full = _overlap_add_array(frames.data, hop)
    span = full.shape[-1]
    out = np.zeros(full.shape[:-1] + (length,), dtype=full.dtype)
    keep = min(span, length)
    out[..., :keep] = full[..., :keep]
    T, N = frames.shape[-2:]

    def backward(g):
        gp = np.zeros(g.shape[:-1] + (span,), dtype=g.dtype)
        gp[..., :keep] = g[..., :keep]
        return (sliding_window_view(gp, N, axis=-1)[..., ::hop, :][..., :T, :].copy(),)

    return make(out, (frames,), backward)



def _half_spectrum_weights(n, dtype):
    """Multiplicity of each rfft bin in the full spectrum (1 at DC/Nyquist, 2 elsewhere)."""
    c = np.full(n // 2 + 1, 2.0, dtype=dtype)
    c[0] = 1.0
    if n % 2 == 0:
        c[-1] = 1.0
    return c


def rfft_frames(frames, n=None):
    """Real FFT over the last axis; returns ``(re, im)`` tensors of ``n // 2 + 1`` bins.

    ``n`` larger than the frame length zero-pads.
    """
    fd = frames.data
    N = fd.shape[-1]
    n = N if n is None else n
    if n < N:
        raise ConfigError(f"fft size {n} shorter than frame length {N}")
    spec = scipy.fft.rfft(fd, n=n, axis=-1)
    half = _half_spectrum_weights(n, fd.dtype)

    # adjoint of rfft: the full-spectrum sum sum_k Re(G_k e^{+i theta}) = n * irfft(G / c)
    def adjoint(gc):
        return (n * scipy.fft.irfft(gc / half * 1.0, n=n, axis=-1)[..., :N].astype(fd.dtype),)

    re = make(spec.real.astype(fd.dtype), (frames,), lambda g: adjoint(g.astype(spec.dtype)))
    im = make(spec.imag.astype(fd.dtype), (frames,), lambda g: adjoint(1j * g.astype(spec.dtype)))
    return re, im


def irfft_frames(re, im, n):
    """Inverse real FFT of ``(re, im)`` half spectra into length-``n`` frames.

    The imaginary parts of the DC and Nyquist bins are ignored.
    """
    dt = re.data.dtype
    out = scipy.fft.irfft(re.data + 1j * im.data, n=n, axis=-1).astype(dt)
    scale = _half_spectrum_weights(n, dt) / n

    def backward(g):
        spec = scipy.fft.rfft(g, n=n, axis=-1)
        return (spec.real * scale).astype(dt), (spec.imag * scale).astype(dt)

    return make(out, (re, im), backward)
