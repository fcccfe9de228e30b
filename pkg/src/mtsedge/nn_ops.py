"""Convolutional building blocks on (H, W, C) maps.

Forward numerics and the conv backward passes run on the kernel backend
(numba or numpy, see kernels/). The transposed path reuses the three conv
kernels with swapped roles: its forward is the standard backward-input pass,
so output extents follow stride*(H-1) + k - 2*pad.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import kernels as K
from .autodiff import value_of, tape_of
from .errors import GeometryError

relu = ad.relu
sigmoid = ad.sigmoid


@dataclass
class ConvParams:
    kernel: object               # (C_out, C_in/groups, kh, kw)
    bias: object                 # (C_out,)
    stride: int = 1
    padding: int = 0
    groups: int = 1
    transposed: bool = False


def make_conv_params(in_channels, out_channels, ksize, rng, *, stride=1,
                     padding=None, groups=1, transposed=False):
    """Glorot-uniform kernel, zero bias. Default padding keeps extents for
    stride-1 odd kernels ("same")."""
    if in_channels % groups or out_channels % groups:
        raise GeometryError(
            f"groups {groups} must divide channels {in_channels}->{out_channels}")
    cig = in_channels // groups
    fan_in = cig * ksize * ksize
    fan_out = (out_channels // groups) * ksize * ksize
    s = np.sqrt(6.0 / (fan_in + fan_out))
    kernel = rng.uniform(-s, s, size=(out_channels, cig, ksize, ksize))
    if padding is None:
        padding = ksize // 2
    return ConvParams(
        kernel=kernel, bias=np.zeros(out_channels), stride=stride,
        padding=padding, groups=groups, transposed=transposed)


def _check_conv_geometry(xv, kv, bv, p):
    if xv.ndim != 3:
        raise GeometryError(f"conv2d input must be (H, W, C), got {xv.shape}")
    if kv.ndim != 4:
        raise GeometryError(f"conv kernel must be rank 4, got {kv.shape}")
    cout = kv.shape[0]
    if bv.shape != (cout,):
        raise GeometryError(f"bias shape {bv.shape} != ({cout},)")
    if p.transposed:
        if p.groups != 1:
            raise GeometryError("transposed conv supports groups=1 only")
        if kv.shape[1] != xv.shape[2]:
            raise GeometryError(
                f"transposed conv expects {kv.shape[1]} input channels, got {xv.shape[2]}")
    else:
        if cout % p.groups:
            raise GeometryError(f"groups {p.groups} must divide C_out {cout}")
        if kv.shape[1] * p.groups != xv.shape[2]:
            raise GeometryError(
                f"kernel wants {kv.shape[1] * p.groups} input channels, got {xv.shape[2]}")
        if xv.shape[0] + 2 * p.padding < kv.shape[2] or xv.shape[1] + 2 * p.padding < kv.shape[3]:
            raise GeometryError("kernel larger than padded input")


def conv2d(x, p):
    xv = np.ascontiguousarray(value_of(x))
    kv = np.ascontiguousarray(value_of(p.kernel))
    bv = np.ascontiguousarray(value_of(p.bias))
    _check_conv_geometry(xv, kv, bv, p)
    stride, pad, groups = p.stride, p.padding, p.groups
    h, w = xv.shape[0], xv.shape[1]
    kh, kw = kv.shape[2], kv.shape[3]

    if p.transposed:
        ho = stride * (h - 1) + kh - 2 * pad
        wo = stride * (w - 1) + kw - 2 * pad
        if ho <= 0 or wo <= 0:
            raise GeometryError(f"transposed conv output {ho}x{wo} not positive")
        swapped = np.ascontiguousarray(kv.transpose(1, 0, 2, 3))
        out = K.conv_bwd_x(xv, swapped, stride, pad, 1, ho, wo) + bv
        tape = tape_of(x, p.kernel, p.bias)
        if tape is None:
            return out

        def vjp(g):
            g = np.ascontiguousarray(g)
            gx = K.conv_fwd(g, swapped, np.zeros(xv.shape[2]), stride, pad, 1)
            gk = K.conv_bwd_k(g, xv, stride, pad, 1, kh, kw).transpose(1, 0, 2, 3)
            return gx, np.ascontiguousarray(gk), g.sum((0, 1))

        return tape.record(out, (x, p.kernel, p.bias), vjp, "conv2d_t")

    out = K.conv_fwd(xv, kv, bv, stride, pad, groups)
    tape = tape_of(x, p.kernel, p.bias)
    if tape is None:
        return out

    def vjp(g):
        g = np.ascontiguousarray(g)
        gx = K.conv_bwd_x(g, kv, stride, pad, groups, h, w)
        gk = K.conv_bwd_k(xv, g, stride, pad, groups, kh, kw)
        return gx, gk, g.sum((0, 1))

    return tape.record(out, (x, p.kernel, p.bias), vjp, "conv2d")


def maxpool2d(x, k=2, stride=2):
    xv = np.ascontiguousarray(value_of(x))
    if xv.ndim != 3:
        raise GeometryError(f"maxpool2d input must be (H, W, C), got {xv.shape}")
    h, w = xv.shape[0], xv.shape[1]
    if h < k or w < k:
        raise GeometryError(f"pool window {k} exceeds input {h}x{w}")
    out, idx = K.pool_fwd(xv, k, stride)
    tape = tape_of(x)
    if tape is None:
        return out
    return tape.record(
        out, (x,),
        lambda g: (K.pool_bwd(np.ascontiguousarray(g), idx, h, w),),
        "maxpool2d")


# ---------------------------------------------------------------------------
# multi-head gate


@dataclass
class HeadParams:
    g1: ConvParams               # 1x1, grouped
    f1: ConvParams               # 3x3, depthwise
    g2: ConvParams
    f2: ConvParams


@dataclass
class GateParams:
    heads: list[HeadParams] = field(default_factory=list)


def make_gate_params(channels, heads, rng):
    if channels % heads:
        raise GeometryError(f"heads {heads} must divide channels {channels}")
    hs = []
    for _ in range(heads):
        hs.append(HeadParams(
            g1=make_conv_params(channels, channels, 1, rng, groups=heads),
            f1=make_conv_params(channels, channels, 3, rng, groups=channels),
            g2=make_conv_params(channels, channels, 1, rng, groups=heads),
            f2=make_conv_params(channels, channels, 3, rng, groups=channels),
        ))
    return GateParams(heads=hs)


def multihead_gate(x, p):
    """Sum over heads of f1(g1(x)) * f2(g2(x)) (elementwise product).

    Products of linear branches make this a quadratic, not linear, map.
    """
    acc = None
    for head in p.heads:
        b1 = conv2d(conv2d(x, head.g1), head.f1)
        b2 = conv2d(conv2d(x, head.g2), head.f2)
        term = ad.mul(b1, b2)
        acc = term if acc is None else ad.add(acc, term)
    return acc


# ---------------------------------------------------------------------------
# conditional convolution


NUM_EXPERTS = 4


@dataclass
class CondConvParams:
    experts: object              # (NUM_EXPERTS, C_out, C_in, kh, kw)
    routing: object              # (NUM_EXPERTS, C_in)
    bias: object                 # (C_out,)


def make_cond_conv_params(in_channels, out_channels, ksize, rng):
    fan = in_channels * ksize * ksize + out_channels * ksize * ksize
    s = np.sqrt(6.0 / fan)
    experts = rng.uniform(
        -s, s, size=(NUM_EXPERTS, out_channels, in_channels, ksize, ksize))
    rs = np.sqrt(6.0 / (in_channels + NUM_EXPERTS))
    routing = rng.uniform(-rs, rs, size=(NUM_EXPERTS, in_channels))
    return CondConvParams(experts=experts, routing=routing, bias=np.zeros(out_channels))


def cond_conv(x, p):
    """Mix expert kernels with input-dependent sigmoid routing weights
    (computed from the globally averaged features), then convolve."""
    ev = value_of(p.experts)
    if ev.ndim != 5 or ev.shape[0] != NUM_EXPERTS:
        raise GeometryError(f"experts must be ({NUM_EXPERTS}, C_out, C_in, kh, kw)")
    pooled = ad.reduce_mean(x, axis=(0, 1))
    r = ad.sigmoid(ad.matvec(p.routing, pooled))
    mixed = ad.reduce_sum(
        ad.mul(ad.reshape(r, (NUM_EXPERTS, 1, 1, 1, 1)), p.experts), axis=0)
    conv = ConvParams(kernel=mixed, bias=p.bias, stride=1,
                      padding=ev.shape[3] // 2, groups=1)
    return conv2d(x, conv)


def routing_weights(x, p):
    """The gate vector in (0, 1)^NUM_EXPERTS for inspection/tests."""
    pooled = ad.reduce_mean(x, axis=(0, 1))
    return ad.sigmoid(ad.matvec(p.routing, pooled))


def upsample_to(x, height, width):
    """Nearest-neighbor enlargement to exact integer-multiple extents."""
    xv = value_of(x)
    h, w = xv.shape[0], xv.shape[1]
    if height % h or width % w:
        raise GeometryError(f"cannot upsample {h}x{w} to {height}x{width} by integer factor")
    return ad.upsample_nearest(x, height // h, width // w)
