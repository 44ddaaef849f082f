"""Compiled LSTM forward/backward loops.

Gate blocks are stacked in rows (input, forget, candidate, output). A batch
is processed in lock-step with the batch index as the innermost axis, so
every sequence is an independent SIMD lane. Gradients are accumulated per
lane and reduced over the batch in index order at the end, so results are
deterministic and do not depend on scheduling.

Array layouts: inputs (T, I, B); states (T+1, H, B); gates (T, 4H, B).
"""

import math

import numba
import numpy as np


@numba.njit(cache=True, inline="always")
def _sigmoid(x):
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


@numba.njit(cache=True)
def forward(Wx, Wh, b, x, hs, cs, tcs, gates):
    """Run a batch x (T, I, B); fills hs, cs, tanh(cs) and gate activations."""
    T, I, B = x.shape
    H = Wh.shape[1]
    hs[0, :, :] = 0.0
    cs[0, :, :] = 0.0
    z = np.empty((4 * H, B))
    for t in range(T):
        for r in range(4 * H):
            zr = z[r]
            br = b[r]
            for n in range(B):
                zr[n] = br
            for k in range(I):
                w = Wx[r, k]
                xk = x[t, k]
                for n in range(B):
                    zr[n] += w * xk[n]
            for k in range(H):
                w = Wh[r, k]
                hk = hs[t, k]
                for n in range(B):
                    zr[n] += w * hk[n]
        for j in range(H):
            for n in range(B):
                ig = _sigmoid(z[j, n])
                fg = _sigmoid(z[H + j, n])
                gg = math.tanh(z[2 * H + j, n])
                og = _sigmoid(z[3 * H + j, n])
                gates[t, j, n] = ig
                gates[t, H + j, n] = fg
                gates[t, 2 * H + j, n] = gg
                gates[t, 3 * H + j, n] = og
                c = fg * cs[t, j, n] + ig * gg
                tc = math.tanh(c)
                cs[t + 1, j, n] = c
                tcs[t + 1, j, n] = tc
                hs[t + 1, j, n] = og * tc


@numba.njit(cache=True)
def backward(Wh, x, hs, cs, tcs, gates, dh_last, dWx, dWh, db):
    """Backpropagate dL/dh_T (H, B) through the batch; add to dWx, dWh, db."""
    T, I, B = x.shape
    H = Wh.shape[1]
    dh = dh_last.copy()
    dc = np.zeros((H, B))
    dz = np.empty((4 * H, B))
    gx = np.zeros((4 * H, I, B))
    gh = np.zeros((4 * H, H, B))
    gb = np.zeros((4 * H, B))
    for t in range(T - 1, -1, -1):
        for j in range(H):
            for n in range(B):
                ig = gates[t, j, n]
                fg = gates[t, H + j, n]
                gg = gates[t, 2 * H + j, n]
                og = gates[t, 3 * H + j, n]
                tc = tcs[t + 1, j, n]
                dcj = dc[j, n] + dh[j, n] * og * (1.0 - tc * tc)
                dz[j, n] = dcj * gg * ig * (1.0 - ig)
                dz[H + j, n] = dcj * cs[t, j, n] * fg * (1.0 - fg)
                dz[2 * H + j, n] = dcj * ig * (1.0 - gg * gg)
                dz[3 * H + j, n] = dh[j, n] * tc * og * (1.0 - og)
                dc[j, n] = dcj * fg
        for r in range(4 * H):
            dzr = dz[r]
            gbr = gb[r]
            for n in range(B):
                gbr[n] += dzr[n]
            for k in range(I):
                g = gx[r, k]
                xk = x[t, k]
                for n in range(B):
                    g[n] += dzr[n] * xk[n]
            for k in range(H):
                g = gh[r, k]
                hk = hs[t, k]
                for n in range(B):
                    g[n] += dzr[n] * hk[n]
        dh[:, :] = 0.0
        for r in range(4 * H):
            dzr = dz[r]
            for k in range(H):
                w = Wh[r, k]
                dhk = dh[k]
                for n in range(B):
                    dhk[n] += w * dzr[n]
    for r in range(4 * H):
        for n in range(B):
            db[r] += gb[r, n]
        for k in range(I):
            for n in range(B):
                dWx[r, k] += gx[r, k, n]
        for k in range(H):
            for n in range(B):
                dWh[r, k] += gh[r, k, n]


@numba.njit(cache=True)
def to_lanes(X, reverse):
    """(B, T, I) -> (T, I, B), optionally reversing time."""
    B, T, I = X.shape
    out = np.empty((T, I, B))
    for n in range(B):
        for t in range(T):
            src = T - 1 - t if reverse else t
            for k in range(I):
                out[t, k, n] = X[n, src, k]
    return out


@numba.njit(cache=True)
def batch_features(fWx, fWh, fb, bWx, bWh, bb, X):
    """Final hidden states of both directions for X (B, T, I) -> (B, 2H)."""
    B, T, I = X.shape
    H = fWh.shape[1]
    out = np.empty((B, 2 * H))
    hs = np.empty((T + 1, H, B))
    cs = np.empty((T + 1, H, B))
    tcs = np.empty((T + 1, H, B))
    gates = np.empty((T, 4 * H, B))
    forward(fWx, fWh, fb, to_lanes(X, False), hs, cs, tcs, gates)
    for j in range(H):
        for n in range(B):
            out[n, j] = hs[T, j, n]
    forward(bWx, bWh, bb, to_lanes(X, True), hs, cs, tcs, gates)
    for j in range(H):
        for n in range(B):
            out[n, H + j] = hs[T, j, n]
    return out


@numba.njit(cache=True)
def batch_loss_grads(fWx, fWh, fb, bWx, bWh, bb, W, c, X, y, lstm_grads):
    """Mean cross-entropy, number of correct argmax predictions (ties to the
    lower class), and gradients of every parameter for X (B, T, I)."""
    B, T, I = X.shape
    H = fWh.shape[1]
    C = W.shape[0]
    xf = to_lanes(X, False)
    xb = to_lanes(X, True)
    fhs = np.empty((T + 1, H, B))
    fcs = np.empty((T + 1, H, B))
    ftcs = np.empty((T + 1, H, B))
    fgates = np.empty((T, 4 * H, B))
    bhs = np.empty((T + 1, H, B))
    bcs = np.empty((T + 1, H, B))
    btcs = np.empty((T + 1, H, B))
    bgates = np.empty((T, 4 * H, B))
    forward(fWx, fWh, fb, xf, fhs, fcs, ftcs, fgates)
    forward(bWx, bWh, bb, xb, bhs, bcs, btcs, bgates)
    g_W = np.zeros_like(W)
    g_c = np.zeros_like(c)
    dfh = np.zeros((H, B))
    dbh = np.zeros((H, B))
    feat = np.empty(2 * H)
    logits = np.empty(C)
    loss = 0.0
    correct = 0
    for n in range(B):
        for j in range(H):
            feat[j] = fhs[T, j, n]
            feat[H + j] = bhs[T, j, n]
        m = -np.inf
        best = 0
        for k in range(C):
            acc = c[k]
            for j in range(2 * H):
                acc += W[k, j] * feat[j]
            logits[k] = acc
            if acc > m:
                m = acc
                best = k
        if best == y[n]:
            correct += 1
        s = 0.0
        for k in range(C):
            s += math.exp(logits[k] - m)
        lse = m + math.log(s)
        loss += lse - logits[y[n]]
        for k in range(C):
            d = math.exp(logits[k] - lse)
            if k == y[n]:
                d -= 1.0
            d /= B
            g_c[k] += d
            for j in range(H):
                g_W[k, j] += d * feat[j]
                g_W[k, H + j] += d * feat[H + j]
                dfh[j, n] += d * W[k, j]
                dbh[j, n] += d * W[k, H + j]
    g_fWx = np.zeros_like(fWx)
    g_fWh = np.zeros_like(fWh)
    g_fb = np.zeros_like(fb)
    g_bWx = np.zeros_like(bWx)
    g_bWh = np.zeros_like(bWh)
    g_bb = np.zeros_like(bb)
    if lstm_grads:
        backward(fWh, xf, fhs, fcs, ftcs, fgates, dfh, g_fWx, g_fWh, g_fb)
        backward(bWh, xb, bhs, bcs, btcs, bgates, dbh, g_bWx, g_bWh, g_bb)
    return loss / B, correct, g_fWx, g_fWh, g_fb, g_bWx, g_bWh, g_bb, g_W, g_c
