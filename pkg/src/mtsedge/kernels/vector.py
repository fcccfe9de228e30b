"""Vectorized numpy twins of the loop kernels.

This is the fallback path used when numba is disabled or unavailable
(MTSEDGE_BACKEND=numpy). Same signatures and bit-for-bit identical results
as loops.py; the benchmark script compares throughput of the two.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def conv_fwd(x, k, bias, stride, pad, groups):
    cout, cig, kh, kw = k.shape
    if pad:
        x = np.pad(x, ((pad, pad), (pad, pad), (0, 0)))
    win = sliding_window_view(x, (kh, kw), axis=(0, 1))[::stride, ::stride]
    ho, wo = win.shape[0], win.shape[1]
    ocg = cout // groups
    out = np.empty((ho, wo, cout), np.float64)
    for g in range(groups):
        wg = win[:, :, g * cig:(g + 1) * cig]
        kg = k[g * ocg:(g + 1) * ocg]
        out[:, :, g * ocg:(g + 1) * ocg] = np.einsum(
            "yxcij,ocij->yxo", wg, kg, optimize=True)
    return out + bias


def conv_bwd_x(gy, k, stride, pad, groups, h_in, w_in):
    ho, wo, cout = gy.shape
    cig, kh, kw = k.shape[1], k.shape[2], k.shape[3]
    ocg = cout // groups
    gxp = np.zeros((h_in + 2 * pad, w_in + 2 * pad, groups * cig), np.float64)
    for g in range(groups):
        gg = gy[:, :, g * ocg:(g + 1) * ocg]
        kg = k[g * ocg:(g + 1) * ocg]
        for ky in range(kh):
            for kx in range(kw):
                m = np.einsum("yxo,oc->yxc", gg, kg[:, :, ky, kx], optimize=True)
                gxp[ky:ky + stride * ho:stride,
                    kx:kx + stride * wo:stride,
                    g * cig:(g + 1) * cig] += m
    if pad:
        return np.ascontiguousarray(gxp[pad:pad + h_in, pad:pad + w_in])
    return gxp


def conv_bwd_k(x, gy, stride, pad, groups, kh, kw):
    h, w, cin = x.shape
    ho, wo, cout = gy.shape
    cig = cin // groups
    ocg = cout // groups
    if pad:
        x = np.pad(x, ((pad, pad), (pad, pad), (0, 0)))
    gk = np.empty((cout, cig, kh, kw), np.float64)
    for g in range(groups):
        gg = gy[:, :, g * ocg:(g + 1) * ocg]
        for ky in range(kh):
            for kx in range(kw):
                xs = x[ky:ky + stride * ho:stride,
                       kx:kx + stride * wo:stride,
                       g * cig:(g + 1) * cig]
                gk[g * ocg:(g + 1) * ocg, :, ky, kx] = np.einsum(
                    "yxc,yxo->oc", xs, gg, optimize=True)
    return gk


def pool_fwd(x, k, stride):
    h, w, c = x.shape
    win = sliding_window_view(x, (k, k), axis=(0, 1))[::stride, ::stride]
    ho, wo = win.shape[0], win.shape[1]
    flat = win.reshape(ho, wo, c, k * k)
    a = flat.argmax(-1)
    out = np.take_along_axis(flat, a[..., None], -1)[..., 0]
    oy = np.arange(ho)[:, None, None] * stride
    ox = np.arange(wo)[None, :, None] * stride
    idx = (oy + a // k) * w + (ox + a % k)
    return np.ascontiguousarray(out), idx.astype(np.int64)


def pool_bwd(gy, idx, h, w):
    ho, wo, c = gy.shape
    gx = np.zeros((h * w, c), np.float64)
    ch = np.broadcast_to(np.arange(c), (ho, wo, c))
    np.add.at(gx, (idx.ravel(), ch.ravel()), gy.ravel())
    return gx.reshape(h, w, c)


def zhang_suen(img):
    out = img.copy()
    while True:
        changed = False
        for phase in (0, 1):
            p2 = out[:-2, 1:-1]
            p3 = out[:-2, 2:]
            p4 = out[1:-1, 2:]
            p5 = out[2:, 2:]
            p6 = out[2:, 1:-1]
            p7 = out[2:, :-2]
            p8 = out[1:-1, :-2]
            p9 = out[:-2, :-2]
            ring = (p2, p3, p4, p5, p6, p7, p8, p9)
            b = sum(r.astype(np.int64) for r in ring)
            a = np.zeros_like(b)
            for i in range(8):
                a += (ring[i] == 0) & (ring[(i + 1) % 8] == 1)
            cond = (out[1:-1, 1:-1] == 1) & (b >= 2) & (b <= 6) & (a == 1)
            if phase == 0:
                cond &= (p2 * p4 * p6 == 0) & (p4 * p6 * p8 == 0)
            else:
                cond &= (p2 * p4 * p8 == 0) & (p2 * p6 * p8 == 0)
            if cond.any():
                out[1:-1, 1:-1][cond] = 0
                changed = True
        if not changed:
            return out


def greedy_match(pred, gt, dys, dxs):
    h, w = pred.shape
    pu = pred.astype(bool).copy()
    gu = gt.astype(bool).copy()
    tp = 0
    for dy, dx in zip(dys, dxs):
        ys0, ys1 = max(0, -dy), min(h, h - dy)
        xs0, xs1 = max(0, -dx), min(w, w - dx)
        if ys0 >= ys1 or xs0 >= xs1:
            continue
        pv = pu[ys0:ys1, xs0:xs1]
        gv = gu[ys0 + dy:ys1 + dy, xs0 + dx:xs1 + dx]
        m = pv & gv
        c = int(m.sum())
        if c:
            pv[m] = False
            gv[m] = False
            tp += c
    return tp
