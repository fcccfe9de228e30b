"""Full detector: reduction backbone, residual gate, refinement net.

The backbone stacks blocks of (reducing multiscale layer -> multi-head gate
-> restoring multiscale layer). Its 3-channel output estimates the non-edge
content of the input, which the residual gate subtracts. A small U-shaped
refinement net then produces three side probability maps and a fused map.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import nn_ops as nn
from . import tensor_ops as to
from .autodiff import value_of
from .config import NetworkConfig
from .errors import GeometryError
from .paramtree import named_leaves


def residual_gate(x, backbone_out):
    """x - sigmoid(b) * b, elementwise. With b == 0 this is exactly x."""
    xv = value_of(x)
    bv = value_of(backbone_out)
    if xv.shape != bv.shape:
        raise GeometryError(f"gate operands differ: {xv.shape} vs {bv.shape}")
    return ad.sub(x, ad.mul(ad.sigmoid(backbone_out), backbone_out))


# ---------------------------------------------------------------------------
# backbone


@dataclass
class ReductionBlockParams:
    down: to.MultiscaleParams    # -> inner channels at reduced extents
    gate: nn.GateParams
    up: to.MultiscaleParams      # -> out channels at the block input extents


def make_block_params(in_channels, inner_channels, out_channels, windows,
                      reduction, terms, heads, rng):
    shrink = math.sqrt(reduction)
    return ReductionBlockParams(
        down=to.make_multiscale_params(
            in_channels, inner_channels, windows, shrink, terms, rng),
        gate=nn.make_gate_params(inner_channels, heads, rng),
        up=to.make_multiscale_params(
            inner_channels, out_channels, windows, 1.0 / shrink, terms, rng),
    )


def block_forward(x, p):
    xv = value_of(x)
    h, w = xv.shape[0], xv.shape[1]
    t = to.multiscale_layer(x, p.down)
    t = nn.multihead_gate(t, p.gate)
    return to.multiscale_layer(t, p.up, out_hw=(h, w))


def backbone_forward(x, blocks):
    t = x
    for p in blocks:
        t = block_forward(t, p)
    return t


# ---------------------------------------------------------------------------
# refinement


@dataclass
class BottleneckParams:
    reduce: nn.ConvParams        # 1x1 down to the mid width
    mid: nn.ConvParams           # 3x3
    expand: nn.ConvParams        # 1x1 up to the scale width


@dataclass
class SideParams:
    mix: nn.CondConvParams       # 3x3 expert mixture on (features ++ residual)
    proj: nn.ConvParams          # 1x1 to a single channel


@dataclass
class RefineParams:
    stem: nn.ConvParams
    enc: list[BottleneckParams] = field(default_factory=list)
    up: list[nn.ConvParams] = field(default_factory=list)
    dec: list[BottleneckParams] = field(default_factory=list)
    sides: list[SideParams] = field(default_factory=list)
    fuse_mix: nn.ConvParams = None
    fuse_out: nn.ConvParams = None


@dataclass
class SideOutputs:
    fused: object                # (H, W, 1) in (0, 1)
    sides: tuple                 # three (H, W, 1) maps, shallow to deep
    residual: object = None      # gated input (H, W, 3) when exposed


def make_bottleneck_params(in_channels, out_channels, rng):
    mid = max(1, out_channels // 2)
    return BottleneckParams(
        reduce=nn.make_conv_params(in_channels, mid, 1, rng),
        mid=nn.make_conv_params(mid, mid, 3, rng),
        expand=nn.make_conv_params(mid, out_channels, 1, rng),
    )


def bottleneck_forward(x, p):
    t = nn.relu(nn.conv2d(x, p.reduce))
    t = nn.relu(nn.conv2d(t, p.mid))
    return nn.relu(nn.conv2d(t, p.expand))


def make_refine_params(plan, rng):
    c1, c2, c3 = plan
    sides = []
    for c in (c1, c2, c3):
        sides.append(SideParams(
            mix=nn.make_cond_conv_params(c + 3, c, 3, rng),
            proj=nn.make_conv_params(c, 1, 1, rng),
        ))
    return RefineParams(
        stem=nn.make_conv_params(3, c1, 3, rng),
        enc=[
            make_bottleneck_params(c1, c1, rng),
            make_bottleneck_params(c1, c2, rng),
            make_bottleneck_params(c2, c3, rng),
        ],
        up=[
            nn.make_conv_params(c3, c2, 2, rng, stride=2, padding=0, transposed=True),
            nn.make_conv_params(c2, c1, 2, rng, stride=2, padding=0, transposed=True),
        ],
        dec=[
            make_bottleneck_params(2 * c2, c2, rng),
            make_bottleneck_params(2 * c1, c1, rng),
        ],
        sides=sides,
        fuse_mix=nn.make_conv_params(3, 3, 3, rng),
        fuse_out=nn.make_conv_params(3, 1, 1, rng),
    )


def _side_map(features, residual, p, height, width):
    fv = value_of(features)
    rv = value_of(residual)
    fy, fx = rv.shape[0] // fv.shape[0], rv.shape[1] // fv.shape[1]
    inj = residual if (fy == 1 and fx == 1) else ad.downsample_nearest(residual, fy, fx)
    t = ad.concat([features, inj], axis=2)
    t = nn.relu(nn.cond_conv(t, p.mix))
    t = nn.upsample_to(t, height, width)
    return nn.sigmoid(nn.conv2d(t, p.proj))


def refine_forward(x_tilde, p):
    xv = value_of(x_tilde)
    h, w = xv.shape[0], xv.shape[1]
    if h % 4 or w % 4:
        raise GeometryError(f"refinement needs extents divisible by 4, got {h}x{w}")

    t = nn.relu(nn.conv2d(x_tilde, p.stem))
    e1 = bottleneck_forward(t, p.enc[0])                 # H,   c1
    e2 = bottleneck_forward(nn.maxpool2d(e1), p.enc[1])  # H/2, c2
    e3 = bottleneck_forward(nn.maxpool2d(e2), p.enc[2])  # H/4, c3

    d2 = nn.relu(nn.conv2d(e3, p.up[0]))
    d2 = bottleneck_forward(ad.concat([d2, e2], axis=2), p.dec[0])
    d1 = nn.relu(nn.conv2d(d2, p.up[1]))
    d1 = bottleneck_forward(ad.concat([d1, e1], axis=2), p.dec[1])

    s1 = _side_map(d1, x_tilde, p.sides[0], h, w)
    s2 = _side_map(d2, x_tilde, p.sides[1], h, w)
    s3 = _side_map(e3, x_tilde, p.sides[2], h, w)

    fused = ad.concat([s1, s2, s3], axis=2)
    fused = nn.relu(nn.conv2d(fused, p.fuse_mix))
    fused = nn.sigmoid(nn.conv2d(fused, p.fuse_out))
    return SideOutputs(fused=fused, sides=(s1, s2, s3))


# ---------------------------------------------------------------------------
# whole net


@dataclass
class NetParams:
    blocks: list[ReductionBlockParams] = field(default_factory=list)
    refine: RefineParams = None


def init_params(cfg: NetworkConfig, rng):
    blocks = []
    for i in range(cfg.blocks):
        cin = 3 if i == 0 else cfg.channels
        cout = 3 if i == cfg.blocks - 1 else cfg.channels
        blocks.append(make_block_params(
            cin, cfg.inner_channels, cout, cfg.windows, cfg.reduction,
            cfg.terms, cfg.heads, rng))
    return NetParams(blocks=blocks, refine=make_refine_params(cfg.refine_plan, rng))


def entry_multiple(cfg: NetworkConfig):
    return math.lcm(4, max(cfg.windows))


def net_forward(x, cfg: NetworkConfig, params: NetParams):
    """Pad to the entry multiple, run backbone + gate + refinement, crop all
    outputs back to the input extents."""
    xv = value_of(x)
    if xv.ndim != 3 or xv.shape[2] != 3:
        raise GeometryError(f"expected an (H, W, 3) image, got {xv.shape}")
    h, w = xv.shape[0], xv.shape[1]
    m = entry_multiple(cfg)
    ph, pw = -h % m, -w % m
    xp = ad.pad_reflect_2d(x, 0, ph, 0, pw) if (ph or pw) else x

    xbar = backbone_forward(xp, params.blocks)
    xt = residual_gate(xp, xbar)
    out = refine_forward(xt, params.refine)

    def crop(t):
        if not (ph or pw):
            return t
        return ad.slice_axes(t, (slice(0, h), slice(0, w), slice(None)))

    return SideOutputs(
        fused=crop(out.fused),
        sides=tuple(crop(s) for s in out.sides),
        residual=crop(xt),
    )


# ---------------------------------------------------------------------------
# cost accounting


def count_params(cfg: NetworkConfig):
    """Exact learnable-scalar total plus a per-section breakdown."""
    params = init_params(cfg, np.random.default_rng(0))
    sections = {}
    total = 0
    for name, leaf in named_leaves(params):
        head = ".".join(name.split(".")[:2])
        sections[head] = sections.get(head, 0) + leaf.size
        total += leaf.size
    return total, sections


def _conv_macs(h, w, cin, cout, k, groups=1, stride=1):
    return (h // stride) * (w // stride) * cout * (cin // groups) * k * k


def _tconv_macs(h, w, cin, cout, k):
    # every input position touches k*k output cells per channel pair
    return h * w * cin * cout * k * k


def _mts_macs(h, w, cin, cout, windows, ratio, terms):
    total = 0
    for win in windows:
        ow = max(1, to.round_half_up(win * ratio))
        tiles = (-(-h // win)) * (-(-w // win))
        per_term = (ow * win * win * cin          # rows
                    + ow * win * ow * cin         # cols
                    + cout * cin * ow * ow)       # channels
        total += tiles * terms * per_term
    return total


def _gate_macs(h, w, channels, heads):
    per_head = 2 * (_conv_macs(h, w, channels, channels, 1, groups=heads)
                    + _conv_macs(h, w, channels, channels, 3, groups=channels))
    return heads * per_head


def _cond_macs(h, w, cin, cout, k):
    mix = nn.NUM_EXPERTS * cout * cin * k * k + nn.NUM_EXPERTS * cin
    return mix + _conv_macs(h, w, cin, cout, k)


def count_flops(cfg: NetworkConfig, height, width):
    """Analytic multiply-accumulate trace of net_forward on an HxW input,
    reported as FLOPs (2 per MAC), with a per-section breakdown."""
    m = entry_multiple(cfg)
    h, w = height + (-height % m), width + (-width % m)
    shrink = math.sqrt(cfg.reduction)
    c1 = cfg.inner_channels
    sections = {}

    for i in range(cfg.blocks):
        cin = 3 if i == 0 else cfg.channels
        cout = 3 if i == cfg.blocks - 1 else cfg.channels
        hr = max(1, to.round_half_up(h * shrink))
        wr = max(1, to.round_half_up(w * shrink))
        macs = (_mts_macs(h, w, cin, c1, cfg.windows, shrink, cfg.terms)
                + _gate_macs(hr, wr, c1, cfg.heads)
                + _mts_macs(hr, wr, c1, cout, cfg.windows, 1.0 / shrink, cfg.terms))
        sections[f"blocks.{i}"] = macs

    p1, p2, p3 = cfg.refine_plan
    enc = _conv_macs(h, w, 3, p1, 3)
    for (hh, ww), (ci, co) in (((h, w), (p1, p1)),
                               ((h // 2, w // 2), (p1, p2)),
                               ((h // 4, w // 4), (p2, p3))):
        mid = max(1, co // 2)
        enc += (_conv_macs(hh, ww, ci, mid, 1) + _conv_macs(hh, ww, mid, mid, 3)
                + _conv_macs(hh, ww, mid, co, 1))
    sections["refine.encoder"] = enc

    dec = _tconv_macs(h // 4, w // 4, p3, p2, 2) + _tconv_macs(h // 2, w // 2, p2, p1, 2)
    for (hh, ww), (ci, co) in (((h // 2, w // 2), (2 * p2, p2)),
                               ((h, w), (2 * p1, p1))):
        mid = max(1, co // 2)
        dec += (_conv_macs(hh, ww, ci, mid, 1) + _conv_macs(hh, ww, mid, mid, 3)
                + _conv_macs(hh, ww, mid, co, 1))
    sections["refine.decoder"] = dec

    sides = 0
    for (hh, ww), c in (((h, w), p1), ((h // 2, w // 2), p2), ((h // 4, w // 4), p3)):
        sides += _cond_macs(hh, ww, c + 3, c, 3) + _conv_macs(h, w, c, 1, 1)
    sections["refine.sides"] = sides
    sections["refine.fuse"] = _conv_macs(h, w, 3, 3, 3) + _conv_macs(h, w, 3, 1, 1)

    sections = {k: 2 * v for k, v in sections.items()}
    return sum(sections.values()), sections
