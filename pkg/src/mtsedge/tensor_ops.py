"""Tensor-summation building blocks.

The central primitive is the mode-k product (a matrix applied to one mode of
a tensor). Sums of full multilinear terms built from it are linear maps; a
windowed variant embeds a feature map into non-overlapping square tiles,
transforms every tile with shared factors, and reassembles the map at a new
spatial scale.

All functions follow the Node/ndarray duality from autodiff.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import value_of, tape_of
from .errors import GeometryError


def round_half_up(v):
    return int(math.floor(v + 0.5))


def mode_product(x, a, mode):
    """Apply matrix ``a`` (m x n) to mode ``mode`` of ``x``; the result swaps
    extent n for m on that mode."""
    xv, av = value_of(x), value_of(a)
    if av.ndim != 2:
        raise GeometryError(f"mode_product factor must be a matrix, got rank {av.ndim}")
    if not 0 <= mode < xv.ndim:
        raise GeometryError(f"mode {mode} out of range for rank {xv.ndim}")
    if xv.shape[mode] != av.shape[1]:
        raise GeometryError(
            f"mode_product extent mismatch: tensor mode {mode} has {xv.shape[mode]}, "
            f"factor expects {av.shape[1]}")
    out = np.moveaxis(np.tensordot(av, xv, axes=([1], [mode])), 0, mode)
    tape = tape_of(x, a)
    if tape is None:
        return np.ascontiguousarray(out)

    rest = tuple(i for i in range(xv.ndim) if i != mode)

    def vjp(g):
        gx = np.moveaxis(np.tensordot(av.T, g, axes=([1], [mode])), 0, mode)
        ga = np.tensordot(g, xv, axes=(rest, rest))
        return np.ascontiguousarray(gx), ga

    return tape.record(np.ascontiguousarray(out), (x, a), vjp, "mode_product")


def multilinear_sum(x, terms):
    """Sum over terms of x contracted with one factor per mode.

    ``terms`` is a list of factor sequences; factor j of every term applies to
    mode j, so each term must carry exactly rank(x) factors and all terms must
    agree on output extents.
    """
    xv = value_of(x)
    if not terms:
        raise GeometryError("multilinear_sum needs at least one term")
    out_shape = None
    for t, factors in enumerate(terms):
        if len(factors) != xv.ndim:
            raise GeometryError(
                f"term {t} has {len(factors)} factors for a rank-{xv.ndim} tensor")
        shape = tuple(value_of(a).shape[0] for a in factors)
        if out_shape is None:
            out_shape = shape
        elif shape != out_shape:
            raise GeometryError(f"term {t} output shape {shape} != {out_shape}")
    acc = None
    for factors in terms:
        y = x
        for j, a in enumerate(factors):
            y = mode_product(y, a, j)
        acc = y if acc is None else ad.add(acc, y)
    return acc


def patch_embed(x, window):
    """Split (H, W, C) into the row-major stack of non-overlapping window
    tiles, shape (num_patches, window, window, C)."""
    xv = value_of(x)
    if xv.ndim != 3:
        raise GeometryError(f"patch_embed wants rank 3, got {xv.ndim}")
    h, w, c = xv.shape
    if window <= 0 or h % window or w % window:
        raise GeometryError(f"window {window} does not tile {h}x{w}")
    gh, gw = h // window, w // window
    t = ad.reshape(x, (gh, window, gw, window, c))
    t = ad.transpose(t, (0, 2, 1, 3, 4))
    return ad.reshape(t, (gh * gw, window, window, c))


def patch_unembed(patches, window, height, width):
    """Inverse of patch_embed for the tile grid implied by (height, width,
    window). Tiles may have changed extents; the output scales accordingly."""
    pv = value_of(patches)
    if pv.ndim != 4:
        raise GeometryError(f"patch_unembed wants rank 4, got {pv.ndim}")
    gh, gw = height // window, width // window
    if height % window or width % window or pv.shape[0] != gh * gw:
        raise GeometryError(
            f"{pv.shape[0]} patches do not match a {gh}x{gw} grid "
            f"({height}x{width} / {window})")
    n, th, tw, c = pv.shape
    t = ad.reshape(patches, (gh, gw, th, tw, c))
    t = ad.transpose(t, (0, 2, 1, 3, 4))
    return ad.reshape(t, (gh * th, gw * tw, c))


# ---------------------------------------------------------------------------
# windowed multi-scale layer


@dataclass
class TermFactors:
    """One multilinear term over a tile: rows (th x w), cols (tw x w),
    channels (C_out x C_in)."""
    rows: object
    cols: object
    channels: object

    def as_tuple(self):
        return (self.rows, self.cols, self.channels)


@dataclass
class ScaleParams:
    window: int
    out_window: tuple[int, int]
    terms: list[TermFactors] = field(default_factory=list)


@dataclass
class MultiscaleParams:
    in_channels: int
    out_channels: int
    ratio: float                 # target output extent ~= ratio * input extent
    scales: list[ScaleParams]
    bias: object                 # (C_out,)


def make_multiscale_params(in_channels, out_channels, windows, ratio, terms, rng):
    """Initialize a layer. Factor entries are uniform(-s, s) with
    s = sqrt(6 / (n + m)) / sqrt(T); bias starts at zero."""
    if len(set(windows)) != len(windows) or any(w <= 0 for w in windows):
        raise GeometryError(f"windows must be distinct positive ints: {windows}")
    if ratio <= 0:
        raise GeometryError(f"ratio must be positive: {ratio}")
    scales = []
    for w in windows:
        ow = max(1, round_half_up(w * ratio))
        tlist = []
        for _ in range(terms):
            factors = []
            for m, n in ((ow, w), (ow, w), (out_channels, in_channels)):
                s = math.sqrt(6.0 / (n + m)) / math.sqrt(terms)
                factors.append(rng.uniform(-s, s, size=(m, n)))
            tlist.append(TermFactors(*factors))
        scales.append(ScaleParams(window=w, out_window=(ow, ow), terms=tlist))
    return MultiscaleParams(
        in_channels=in_channels,
        out_channels=out_channels,
        ratio=float(ratio),
        scales=scales,
        bias=np.zeros(out_channels),
    )


def _tile_slot(out_extent, grid):
    return -(-out_extent // grid)  # ceil


def _fit_tiles(tiles, slot_h, slot_w):
    """Zero-pad or crop the tile axes (1, 2) to the slot extents."""
    tv = value_of(tiles)
    th, tw = tv.shape[1], tv.shape[2]
    if th > slot_h or tw > slot_w:
        tiles = ad.slice_axes(
            tiles,
            (slice(None), slice(0, min(th, slot_h)), slice(0, min(tw, slot_w)), slice(None)))
        tv = value_of(tiles)
        th, tw = tv.shape[1], tv.shape[2]
    if th < slot_h or tw < slot_w:
        tiles = ad.pad_zero(
            tiles, ((0, 0), (0, slot_h - th), (0, slot_w - tw), (0, 0)))
    return tiles


def multiscale_layer(x, p, out_hw=None):
    """Windowed sum-of-terms transform at several window scales.

    Each scale reflect-pads the input to a multiple of its window, embeds
    tiles, applies the shared per-tile factors, fits transformed tiles into a
    common output grid (zero pad / crop) and reassembles. Scales are summed
    and a per-channel bias is added. ``out_hw`` overrides the ratio-derived
    target extents (used by restoring layers to hit their block's entry size
    exactly).
    """
    xv = value_of(x)
    if xv.ndim != 3 or xv.shape[2] != p.in_channels:
        raise GeometryError(
            f"layer expects (H, W, {p.in_channels}), got {xv.shape}")
    h, w = xv.shape[0], xv.shape[1]
    if out_hw is None:
        out_h = max(1, round_half_up(h * p.ratio))
        out_w = max(1, round_half_up(w * p.ratio))
    else:
        out_h, out_w = out_hw
    acc = None
    for sc in p.scales:
        win = sc.window
        hp = -(-h // win) * win
        wp = -(-w // win) * win
        t = ad.pad_reflect_2d(x, 0, hp - h, 0, wp - w) if (hp > h or wp > w) else x
        t = patch_embed(t, win)
        term_sum = None
        for tf in sc.terms:
            y = t
            for j, a in enumerate(tf.as_tuple()):
                y = mode_product(y, a, j + 1)
            term_sum = y if term_sum is None else ad.add(term_sum, y)
        slot_h = _tile_slot(out_h, hp // win)
        slot_w = _tile_slot(out_w, wp // win)
        term_sum = _fit_tiles(term_sum, slot_h, slot_w)
        grid = patch_unembed(term_sum, win, hp, wp)
        gv = value_of(grid)
        if gv.shape[0] > out_h or gv.shape[1] > out_w:
            grid = ad.slice_axes(
                grid, (slice(0, out_h), slice(0, out_w), slice(None)))
        acc = grid if acc is None else ad.add(acc, grid)
    return ad.add(acc, p.bias)
