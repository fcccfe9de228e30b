"""Loop-form numeric kernels.

Every function here is written in nopython-compatible style (plain loops,
preallocated outputs, no Python objects) so the dispatcher can compile the
same source with numba. The vectorized twins live in vector.py; both must
produce identical results, which the test suite enforces elementwise.

Layout conventions: feature maps are (H, W, C) float64, conv kernels are
(C_out, C_in/groups, kh, kw), binary maps are (H, W) uint8.
"""

import numpy as np


def conv_fwd(x, k, bias, stride, pad, groups):
    h, w, cin = x.shape
    cout, cig, kh, kw = k.shape
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (w + 2 * pad - kw) // stride + 1
    ocg = cout // groups
    out = np.empty((ho, wo, cout), np.float64)
    for oy in range(ho):
        for ox in range(wo):
            for g in range(groups):
                for oc in range(ocg):
                    c = g * ocg + oc
                    acc = bias[c]
                    for ky in range(kh):
                        iy = oy * stride + ky - pad
                        if iy < 0 or iy >= h:
                            continue
                        for kx in range(kw):
                            ix = ox * stride + kx - pad
                            if ix < 0 or ix >= w:
                                continue
                            for ic in range(cig):
                                acc += x[iy, ix, g * cig + ic] * k[c, ic, ky, kx]
                    out[oy, ox, c] = acc
    return out


def conv_bwd_x(gy, k, stride, pad, groups, h_in, w_in):
    ho, wo, cout = gy.shape
    cig, kh, kw = k.shape[1], k.shape[2], k.shape[3]
    ocg = cout // groups
    gx = np.zeros((h_in, w_in, groups * cig), np.float64)
    for oy in range(ho):
        for ox in range(wo):
            for g in range(groups):
                for oc in range(ocg):
                    c = g * ocg + oc
                    gv = gy[oy, ox, c]
                    if gv == 0.0:
                        continue
                    for ky in range(kh):
                        iy = oy * stride + ky - pad
                        if iy < 0 or iy >= h_in:
                            continue
                        for kx in range(kw):
                            ix = ox * stride + kx - pad
                            if ix < 0 or ix >= w_in:
                                continue
                            for ic in range(cig):
                                gx[iy, ix, g * cig + ic] += gv * k[c, ic, ky, kx]
    return gx


def conv_bwd_k(x, gy, stride, pad, groups, kh, kw):
    h, w, cin = x.shape
    ho, wo, cout = gy.shape
    cig = cin // groups
    ocg = cout // groups
    gk = np.zeros((cout, cig, kh, kw), np.float64)
    for oy in range(ho):
        for ox in range(wo):
            for g in range(groups):
                for oc in range(ocg):
                    c = g * ocg + oc
                    gv = gy[oy, ox, c]
                    if gv == 0.0:
                        continue
                    for ky in range(kh):
                        iy = oy * stride + ky - pad
                        if iy < 0 or iy >= h:
                            continue
                        for kx in range(kw):
                            ix = ox * stride + kx - pad
                            if ix < 0 or ix >= w:
                                continue
                            for ic in range(cig):
                                gk[c, ic, ky, kx] += gv * x[iy, ix, g * cig + ic]
    return gk


def pool_fwd(x, k, stride):
    h, w, c = x.shape
    ho = (h - k) // stride + 1
    wo = (w - k) // stride + 1
    out = np.empty((ho, wo, c), np.float64)
    idx = np.empty((ho, wo, c), np.int64)
    for oy in range(ho):
        for ox in range(wo):
            for ch in range(c):
                by = oy * stride
                bx = ox * stride
                best = x[by, bx, ch]
                bi = by * w + bx
                for ky in range(k):
                    for kx in range(k):
                        v = x[by + ky, bx + kx, ch]
                        if v > best:
                            best = v
                            bi = (by + ky) * w + (bx + kx)
                out[oy, ox, ch] = best
                idx[oy, ox, ch] = bi
    return out, idx


def pool_bwd(gy, idx, h, w):
    ho, wo, c = gy.shape
    gx = np.zeros((h, w, c), np.float64)
    for oy in range(ho):
        for ox in range(wo):
            for ch in range(c):
                flat = idx[oy, ox, ch]
                gx[flat // w, flat % w, ch] += gy[oy, ox, ch]
    return gx


def zhang_suen(img):
    # img must carry a zero border; deletions are marked on a snapshot and
    # applied per sub-iteration, matching the classic simultaneous rule.
    h, w = img.shape
    out = img.copy()
    marks = np.zeros((h, w), np.uint8)
    changed = True
    while changed:
        changed = False
        for phase in range(2):
            n = 0
            for y in range(1, h - 1):
                for x in range(1, w - 1):
                    if out[y, x] == 0:
                        continue
                    p2 = out[y - 1, x]
                    p3 = out[y - 1, x + 1]
                    p4 = out[y, x + 1]
                    p5 = out[y + 1, x + 1]
                    p6 = out[y + 1, x]
                    p7 = out[y + 1, x - 1]
                    p8 = out[y, x - 1]
                    p9 = out[y - 1, x - 1]
                    b = int(p2) + int(p3) + int(p4) + int(p5) + int(p6) + int(p7) + int(p8) + int(p9)
                    if b < 2 or b > 6:
                        continue
                    a = 0
                    if p2 == 0 and p3 == 1:
                        a += 1
                    if p3 == 0 and p4 == 1:
                        a += 1
                    if p4 == 0 and p5 == 1:
                        a += 1
                    if p5 == 0 and p6 == 1:
                        a += 1
                    if p6 == 0 and p7 == 1:
                        a += 1
                    if p7 == 0 and p8 == 1:
                        a += 1
                    if p8 == 0 and p9 == 1:
                        a += 1
                    if p9 == 0 and p2 == 1:
                        a += 1
                    if a != 1:
                        continue
                    if phase == 0:
                        if p2 * p4 * p6 != 0:
                            continue
                        if p4 * p6 * p8 != 0:
                            continue
                    else:
                        if p2 * p4 * p8 != 0:
                            continue
                        if p2 * p6 * p8 != 0:
                            continue
                    marks[y, x] = 1
                    n += 1
            if n > 0:
                changed = True
                for y in range(1, h - 1):
                    for x in range(1, w - 1):
                        if marks[y, x] == 1:
                            out[y, x] = 0
                            marks[y, x] = 0
    return out


def greedy_match(pred, gt, dys, dxs):
    # Offsets arrive sorted by (distance^2, dy, dx); within one offset the
    # scan is row-major. A fixed offset is a translation, so matches inside
    # it never collide and the vectorized twin produces the same set.
    h, w = pred.shape
    pu = pred.copy()
    gu = gt.copy()
    tp = 0
    for i in range(dys.shape[0]):
        dy = dys[i]
        dx = dxs[i]
        for y in range(h):
            ny = y + dy
            if ny < 0 or ny >= h:
                continue
            for x in range(w):
                if pu[y, x] == 0:
                    continue
                nx = x + dx
                if nx < 0 or nx >= w:
                    continue
                if gu[ny, nx] == 1:
                    pu[y, x] = 0
                    gu[ny, nx] = 0
                    tp += 1
    return tp
