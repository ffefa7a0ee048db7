"""Numba-compiled kernels, mirroring ``_numpy`` one-for-one."""
import math

import numpy as np
from numba import njit

JIT_OPTIONS = {"cache": True, "nogil": True}


@njit(**JIT_OPTIONS)
def _sigmoid(x):
    return 0.5 * (math.tanh(0.5 * x) + 1.0)


@njit(**JIT_OPTIONS)
def gru_scan_forward(gi, wh, bh, h0):
    B, T, G, _, d = gi.shape
    hs = np.empty((B, T, G, d), dtype=gi.dtype)
    r = np.empty_like(hs)
    z = np.empty_like(hs)
    n = np.empty_like(hs)
    ghn = np.empty_like(hs)
    gh = np.empty((3, d), dtype=gi.dtype)
    for b in range(B):
        for g in range(G):
            for t in range(T):
                for k in range(3):
                    for j in range(d):
                        acc = bh[g, k, j]
                        for i in range(d):
                            hp = hs[b, t - 1, g, i] if t > 0 else h0[b, g, i]
                            acc += hp * wh[g, k, i, j]
                        gh[k, j] = acc
                for j in range(d):
                    hp = hs[b, t - 1, g, j] if t > 0 else h0[b, g, j]
                    r_t = _sigmoid(gi[b, t, g, 0, j] + gh[0, j])
                    z_t = _sigmoid(gi[b, t, g, 1, j] + gh[1, j])
                    n_t = math.tanh(gi[b, t, g, 2, j] + r_t * gh[2, j])
                    r[b, t, g, j] = r_t
                    z[b, t, g, j] = z_t
                    n[b, t, g, j] = n_t
                    ghn[b, t, g, j] = gh[2, j]
                    hs[b, t, g, j] = (1.0 - z_t) * n_t + z_t * hp
    return hs, r, z, n, ghn


@njit(**JIT_OPTIONS)
def gru_scan_backward(dhs, hs, h0, r, z, n, ghn, wh):
    B, T, G, d = hs.shape
    dgi = np.empty((B, T, G, 3, d), dtype=hs.dtype)
    dwh = np.zeros_like(wh)
    dbh = np.zeros((G, 3, d), dtype=hs.dtype)
    dh0 = np.zeros((B, G, d), dtype=hs.dtype)
    carry = np.zeros(d, dtype=hs.dtype)
    dh = np.empty(d, dtype=hs.dtype)
    hp = np.empty(d, dtype=hs.dtype)
    dgh = np.empty((3, d), dtype=hs.dtype)
    for b in range(B):
        for g in range(G):
            carry[:] = 0.0
            for t in range(T - 1, -1, -1):
                for j in range(d):
                    hp[j] = hs[b, t - 1, g, j] if t > 0 else h0[b, g, j]
                    dh[j] = dhs[b, t, g, j] + carry[j]
                for j in range(d):
                    z_t = z[b, t, g, j]
                    n_t = n[b, t, g, j]
                    r_t = r[b, t, g, j]
                    dan = dh[j] * (1.0 - z_t) * (1.0 - n_t * n_t)
                    dar = dan * ghn[b, t, g, j] * r_t * (1.0 - r_t)
                    daz = dh[j] * (hp[j] - n_t) * z_t * (1.0 - z_t)
                    dgh[0, j] = dar
                    dgh[1, j] = daz
                    dgh[2, j] = dan * r_t
                    dgi[b, t, g, 0, j] = dar
                    dgi[b, t, g, 1, j] = daz
                    dgi[b, t, g, 2, j] = dan
                for k in range(3):
                    for j in range(d):
                        dbh[g, k, j] += dgh[k, j]
                for i in range(d):
                    acc = dh[i] * z[b, t, g, i]
                    for k in range(3):
                        for j in range(d):
                            dwh[g, k, i, j] += hp[i] * dgh[k, j]
                            acc += dgh[k, j] * wh[g, k, i, j]
                    carry[i] = acc
            for j in range(d):
                dh0[b, g, j] = carry[j]
    return dgi, dwh, dbh, dh0


@njit(**JIT_OPTIONS)
def window_attention_forward(q, k, v, window, scale):
    B, T, H, d = q.shape
    out = np.zeros((B, T, H, d), dtype=q.dtype)
    p = np.zeros((B, T, H, window), dtype=q.dtype)
    for b in range(B):
        for h in range(H):
            for t in range(T):
                first = max(0, window - 1 - t)
                m = -np.inf
                for slot in range(first, window):
                    s = t - window + 1 + slot
                    acc = 0.0
                    for c in range(d):
                        acc += q[b, t, h, c] * k[b, s, h, c]
                    acc *= scale
                    p[b, t, h, slot] = acc
                    if acc > m:
                        m = acc
                total = 0.0
                for slot in range(first, window):
                    e = math.exp(p[b, t, h, slot] - m)
                    p[b, t, h, slot] = e
                    total += e
                for slot in range(first, window):
                    w = p[b, t, h, slot] / total
                    p[b, t, h, slot] = w
                    s = t - window + 1 + slot
                    for c in range(d):
                        out[b, t, h, c] += w * v[b, s, h, c]
    return out, p


@njit(**JIT_OPTIONS)
def window_attention_backward(g, q, k, v, p, window, scale):
    B, T, H, d = q.shape
    dq = np.zeros_like(q)
    dk = np.zeros_like(k)
    dv = np.zeros_like(v)
    dp = np.empty(window, dtype=q.dtype)
    for b in range(B):
        for h in range(H):
            for t in range(T):
                first = max(0, window - 1 - t)
                inner = 0.0
                for slot in range(first, window):
                    s = t - window + 1 + slot
                    acc = 0.0
                    for c in range(d):
                        acc += g[b, t, h, c] * v[b, s, h, c]
                        dv[b, s, h, c] += p[b, t, h, slot] * g[b, t, h, c]
                    dp[slot] = acc
                    inner += p[b, t, h, slot] * acc
                for slot in range(first, window):
                    s = t - window + 1 + slot
                    ds = p[b, t, h, slot] * (dp[slot] - inner) * scale
                    for c in range(d):
                        dq[b, t, h, c] += ds * k[b, s, h, c]
                        dk[b, s, h, c] += ds * q[b, t, h, c]
    return dq, dk, dv


@njit(**JIT_OPTIONS)
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


@njit(**JIT_OPTIONS)
def markov_walk(cum, emission, start, u_trans, u_emit):
    n_packets = u_trans.shape[0]
    states = np.empty(n_packets, dtype=np.int8)
    lost = np.empty(n_packets, dtype=np.bool_)
    state = start
    n_states = cum.shape[0]
    for i in range(n_packets):
        states[i] = state
        lost[i] = u_emit[i] < emission[state]
        nxt = 0
        while nxt < n_states - 1 and u_trans[i] >= cum[state, nxt]:
            nxt += 1
        state = nxt
    return states, lost


@njit(**JIT_OPTIONS)
def nearest_codeword(x, book):
    n_rows, d = x.shape
    idx = np.empty(n_rows, dtype=np.int64)
    for r in range(n_rows):
        best = np.inf
        arg = 0
        for s in range(book.shape[0]):
            acc = 0.0
            for c in range(d):
                diff = x[r, c] - book[s, c]
                acc += diff * diff
            if acc < best:
                best = acc
                arg = s
        idx[r] = arg
    return idx
