"""Pure-numpy reference kernels.

Each function here has a twin of the same name and signature in ``_numba``.
"""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _sigmoid(x):
    return 0.5 * (np.tanh(0.5 * x) + 1.0)


def gru_scan_forward(gi, wh, bh, h0):
    # gi: (B, T, G, 3, d) input projections; wh: (G, 3, d, d); bh: (G, 3, d); h0: (B, G, d)
    B, T, G, _, d = gi.shape
    hs = np.empty((B, T, G, d), dtype=gi.dtype)
    r = np.empty_like(hs)
    z = np.empty_like(hs)
    n = np.empty_like(hs)
    ghn = np.empty_like(hs)
    h = h0
    for t in range(T):
        gh = np.einsum("bgi,gkij->bgkj", h, wh) + bh
        r_t = _sigmoid(gi[:, t, :, 0] + gh[:, :, 0])
        z_t = _sigmoid(gi[:, t, :, 1] + gh[:, :, 1])
        n_t = np.tanh(gi[:, t, :, 2] + r_t * gh[:, :, 2])
        h = (1.0 - z_t) * n_t + z_t * h
        hs[:, t] = h
        r[:, t] = r_t
        z[:, t] = z_t
        n[:, t] = n_t
        ghn[:, t] = gh[:, :, 2]
    return hs, r, z, n, ghn


def gru_scan_backward(dhs, hs, h0, r, z, n, ghn, wh):
    B, T, G, d = hs.shape
    dgi = np.empty((B, T, G, 3, d), dtype=hs.dtype)
    dwh = np.zeros_like(wh)
    dbh = np.zeros((G, 3, d), dtype=hs.dtype)
    carry = np.zeros((B, G, d), dtype=hs.dtype)
    for t in range(T - 1, -1, -1):
        hp = hs[:, t - 1] if t > 0 else h0
        dh = dhs[:, t] + carry
        z_t, n_t, r_t = z[:, t], n[:, t], r[:, t]
        dn = dh * (1.0 - z_t)
        dz = dh * (hp - n_t)
        dan = dn * (1.0 - n_t * n_t)
        dar = dan * ghn[:, t] * r_t * (1.0 - r_t)
        daz = dz * z_t * (1.0 - z_t)
        dgh = np.stack([dar, daz, dan * r_t], axis=2)
        dgi[:, t, :, 0] = dar
        dgi[:, t, :, 1] = daz
        dgi[:, t, :, 2] = dan
        dwh += np.einsum("bgi,bgkj->gkij", hp, dgh)
        dbh += dgh.sum(axis=0)
        carry = dh * z_t + np.einsum("bgkj,gkij->bgi", dgh, wh)
    return dgi, dwh, dbh, carry


def _windows(x, window):
    B, T, H, d = x.shape
    xp = np.concatenate([np.zeros((B, window - 1, H, d), dtype=x.dtype), x], axis=1)
    return sliding_window_view(xp, window, axis=1)  # (B, T, H, d, N)


def window_attention_forward(q, k, v, window, scale):
    # Keys for query t are frames t-window+1 .. t; slot n holds frame t-window+1+n.
    B, T, H, d = q.shape
    kw = _windows(k, window)
    vw = _windows(v, window)
    s = np.einsum("bthd,bthdn->bthn", q, kw) * scale
    slot = np.arange(window)[None, :]
    invalid = slot < (window - 1 - np.arange(T)[:, None])  # (T, N)
    s = np.where(invalid[None, :, None, :], -np.inf, s)
    s = s - s.max(axis=-1, keepdims=True)
    p = np.exp(s)
    p /= p.sum(axis=-1, keepdims=True)
    out = np.einsum("bthn,bthdn->bthd", p, vw)
    return out, p


def window_attention_backward(g, q, k, v, p, window, scale):
    B, T, H, d = q.shape
    kw = _windows(k, window)
    vw = _windows(v, window)
    dp = np.einsum("bthd,bthdn->bthn", g, vw)
    ds = p * (dp - (p * dp).sum(axis=-1, keepdims=True))
    dq = np.einsum("bthn,bthdn->bthd", ds, kw) * scale
    dkw = np.einsum("bthn,bthd->bthnd", ds, q) * scale
    dvw = np.einsum("bthn,bthd->bthnd", p, g)
    dkp = np.zeros((B, T + window - 1, H, d), dtype=q.dtype)
    dvp = np.zeros_like(dkp)
    for s in range(window):
        dkp[:, s:s + T] += dkw[:, :, :, s]
        dvp[:, s:s + T] += dvw[:, :, :, s]
    return dq, dkp[:, window - 1:], dvp[:, window - 1:]


def cap_bursts(lost, cap):
    out = lost.copy()
    run = 0
    for i in range(out.shape[0]):
        if out[i]:
            if run >= cap:
                out[i] = False
                run = 0
            else:
                run += 1
        else:
            run = 0
    return out


def markov_walk(cum, emission, start, u_trans, u_emit):
    n_packets = u_trans.shape[0]
    states = np.empty(n_packets, dtype=np.int8)
    lost = np.empty(n_packets, dtype=np.bool_)
    state = start
    for i in range(n_packets):
        states[i] = state
        lost[i] = u_emit[i] < emission[state]
        row = cum[state]
        nxt = 0
        while nxt < row.shape[0] - 1 and u_trans[i] >= row[nxt]:
            nxt += 1
        state = nxt
    return states, lost


def nearest_codeword(x, book, chunk=256):
    idx = np.empty(x.shape[0], dtype=np.int64)
    for s in range(0, x.shape[0], chunk):
        diff = x[s:s + chunk, None, :] - book[None, :, :]
        idx[s:s + chunk] = np.argmin((diff * diff).sum(axis=-1), axis=1)
    return idx
