"""Finite-difference verification of every differentiable op.

Each check builds a scalar objective from an op (random fixed projection of
the output), evaluates the taped gradient for every input array, and
compares against central differences. Large arrays are probed at a sampled
subset of coordinates to keep the micro suite fast. Inputs for kinked ops
(relu paths, max pooling) are spread out so no kink sits within the probe
step.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import nn_ops as nn
from . import tensor_ops as to
from .autodiff import Tape, value_of
from .config import NetworkConfig
from .model import SideOutputs, init_params, net_forward, residual_gate
from .paramtree import map_leaves, named_leaves
from .seeding import stream
from .training import LossWeights, detection_loss, weighted_bce

DEFAULT_RTOL = 1e-4


@dataclass
class CheckResult:
    name: str
    max_rel: float
    tolerance: float
    ok: bool
    seconds: float


def relative_gap(analytic, numeric):
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = max(float(np.max(np.abs(numeric))), 1e-8)
    return float(np.max(np.abs(analytic - numeric))) / scale


def _sample_coords(shape, limit, rng):
    size = int(np.prod(shape, dtype=np.int64)) if shape else 1
    if size <= limit:
        return np.arange(size)
    return np.sort(rng.choice(size, size=limit, replace=False))


def _numeric_at(f, x, flat_coords, h):
    base = np.array(x, dtype=np.float64)
    flat = base.reshape(-1)
    out = np.empty(len(flat_coords))
    for j, c in enumerate(flat_coords):
        keep = flat[c]
        flat[c] = keep + h
        hi = float(f(base))
        flat[c] = keep - h
        lo = float(f(base))
        flat[c] = keep
        out[j] = (hi - lo) / (2.0 * h)
    return out


def fd_check(name, fn, arrays, *, h=1e-3, rtol=DEFAULT_RTOL,
             max_coords=64, rng=None) -> CheckResult:
    """Compare taped gradients of scalar fn(*arrays) with central differences.

    fn receives one Node per array (all on one tape) and must return a
    scalar; it must equally accept plain ndarrays for the probe evaluations.
    """
    rng = rng or np.random.default_rng(0)
    t0 = time.perf_counter()
    tape = Tape()
    nodes = [tape.leaf(a, f"arg{i}") for i, a in enumerate(arrays)]
    grads = tape.backward(fn(*nodes))
    worst = 0.0
    for i, (node, base) in enumerate(zip(nodes, arrays)):
        analytic = grads[node.node_id].reshape(-1)
        coords = _sample_coords(np.shape(base), max_coords, rng)

        def probe(arr, i=i):
            args = list(arrays)
            args[i] = arr
            return value_of(fn(*args))

        numeric = _numeric_at(probe, base, coords, h)
        worst = max(worst, relative_gap(analytic[coords], numeric))
    dt = time.perf_counter() - t0
    return CheckResult(name=name, max_rel=worst, tolerance=rtol,
                       ok=worst < rtol, seconds=dt)


def _spread(rng, shape, step=0.25):
    """Well-separated values (shuffled ramp plus jitter): keeps relu/max
    kinks farther from any probe point than the step size."""
    size = int(np.prod(shape))
    ramp = np.linspace(-0.5 * step * size, 0.5 * step * size, size)
    vals = rng.permutation(ramp) + rng.uniform(-0.05, 0.05, size)
    return vals.reshape(shape)


def _proj(rng, template):
    return rng.uniform(0.5, 1.5, size=np.shape(value_of(template)))


def _scalar(out, proj):
    return ad.reduce_sum(ad.mul(proj, out))


# ---------------------------------------------------------------------------
# the suites


def _mode_product_checks(results, rng, sizes):
    a, b, c = sizes
    for mode, (m, n) in ((0, (a + 1, a)), (1, (b + 2, b)), (2, (c + 1, c))):
        x = rng.standard_normal((a, b, c))
        mat = rng.standard_normal((m, n))
        shape = [a, b, c]
        shape[mode] = m
        proj = rng.uniform(0.5, 1.5, size=tuple(shape))
        results.append(fd_check(
            f"mode_product(mode={mode})",
            lambda x, mat, mode=mode, proj=proj: _scalar(to.mode_product(x, mat, mode), proj),
            [x, mat], rng=rng))


def _multilinear_checks(results, rng, sizes):
    a, b, c = sizes
    for terms in (1, 2, 3):
        x = rng.standard_normal((a, b, c))
        factors = []
        arrays = [x]
        for _ in range(terms):
            fs = (rng.standard_normal((a, a)), rng.standard_normal((b, b)),
                  rng.standard_normal((c + 1, c)))
            factors.append(fs)
            arrays.extend(fs)
        proj = rng.uniform(0.5, 1.5, size=(a, b, c + 1))

        def fn(x, *flat, terms=terms, proj=proj):
            packed = [tuple(flat[i * 3:(i + 1) * 3]) for i in range(terms)]
            return _scalar(to.multilinear_sum(x, packed), proj)

        results.append(fd_check(f"multilinear_sum(T={terms})", fn, arrays, rng=rng))


def _multiscale_checks(results, rng, size):
    for tag, ratio, out_hw in (("down", 0.6324555320336759, None),
                               ("up", 1.5811388300841898, (size, size)),
                               ("single", 1.0, None)):
        windows = (2, max(3, size // 2)) if tag != "single" else (size,)
        p = to.make_multiscale_params(2, 3, windows, ratio, 2, rng)
        x = rng.standard_normal((size, size, 2))
        arrays = [x]
        places = []                     # rebuild layer params from flat args
        for si, sc in enumerate(p.scales):
            for ti, tf in enumerate(sc.terms):
                for fname in ("rows", "cols", "channels"):
                    places.append((si, ti, fname))
                    arrays.append(value_of(getattr(tf, fname)))
        arrays.append(value_of(p.bias))
        ov = to.multiscale_layer(x, p, out_hw=out_hw)
        proj = rng.uniform(0.5, 1.5, size=np.shape(value_of(ov)))

        def fn(x, *flat, p=p, places=places, out_hw=out_hw, proj=proj):
            scales = [
                to.ScaleParams(window=sc.window, out_window=sc.out_window,
                               terms=[to.TermFactors(None, None, None)
                                      for _ in sc.terms])
                for sc in p.scales
            ]
            for (si, ti, fname), arr in zip(places, flat[:-1]):
                setattr(scales[si].terms[ti], fname, arr)
            q = to.MultiscaleParams(
                in_channels=p.in_channels, out_channels=p.out_channels,
                ratio=p.ratio, scales=scales, bias=flat[-1])
            return _scalar(to.multiscale_layer(x, q, out_hw=out_hw), proj)

        results.append(fd_check(
            f"multiscale_layer({tag})", fn, arrays, max_coords=24, rng=rng))


def _conv_checks(results, rng, size):
    cases = [
        ("conv2d(3x3)", dict(cin=2, cout=3, k=3, stride=1, pad=1, groups=1, t=False)),
        ("conv2d(stride2)", dict(cin=2, cout=2, k=3, stride=2, pad=1, groups=1, t=False)),
        ("conv2d(grouped1x1)", dict(cin=4, cout=4, k=1, stride=1, pad=0, groups=2, t=False)),
        ("conv2d(depthwise)", dict(cin=3, cout=3, k=3, stride=1, pad=1, groups=3, t=False)),
        ("conv2d(transposed)", dict(cin=2, cout=2, k=2, stride=2, pad=0, groups=1, t=True)),
    ]
    for name, c in cases:
        x = rng.standard_normal((size, size, c["cin"]))
        kshape = (c["cout"], c["cin"] // c["groups"], c["k"], c["k"])
        kernel = rng.standard_normal(kshape) * 0.5
        bias = rng.standard_normal(c["cout"]) * 0.1
        make = lambda kernel, bias, c=c: nn.ConvParams(
            kernel=kernel, bias=bias, stride=c["stride"], padding=c["pad"],
            groups=c["groups"], transposed=c["t"])
        proj = rng.uniform(0.5, 1.5, size=np.shape(nn.conv2d(x, make(kernel, bias))))

        def fn(x, kernel, bias, make=make, proj=proj):
            return _scalar(nn.conv2d(x, make(kernel, bias)), proj)

        results.append(fd_check(name, fn, [x, kernel, bias], rng=rng))


def _pool_check(results, rng, sizes):
    for size in sizes:
        x = _spread(rng, (size, size, 2))
        proj = rng.uniform(0.5, 1.5, size=np.shape(value_of(nn.maxpool2d(x))))
        results.append(fd_check(
            f"maxpool2d({size}x{size})",
            lambda x, proj=proj: _scalar(nn.maxpool2d(x), proj),
            [x], h=1e-4, rng=rng))


def _gate_check(results, rng, sizes):
    for size in sizes:
        p = nn.make_gate_params(4, 2, rng)
        x = rng.standard_normal((size, size, 4))
        names, arrays = zip(*named_leaves(p, "gate"))
        arrays = [x] + [value_of(a) for a in arrays]
        proj = rng.uniform(0.5, 1.5, size=(size, size, 4))

        def fn(x, *flat, p=p, names=names, proj=proj):
            heads = []
            vals = dict(zip(names, flat))
            for i, h in enumerate(p.heads):
                heads.append(nn.HeadParams(*[
                    nn.ConvParams(kernel=vals[f"gate.heads.{i}.{f}.kernel"],
                                  bias=vals[f"gate.heads.{i}.{f}.bias"],
                                  stride=getattr(h, f).stride,
                                  padding=getattr(h, f).padding,
                                  groups=getattr(h, f).groups)
                    for f in ("g1", "f1", "g2", "f2")]))
            return _scalar(nn.multihead_gate(x, nn.GateParams(heads=heads)), proj)

        results.append(fd_check(f"multihead_gate({size}x{size})", fn, arrays,
                                max_coords=32, rng=rng))


def _cond_conv_check(results, rng, sizes):
    for size in sizes:
        p = nn.make_cond_conv_params(3, 2, 3, rng)
        x = rng.standard_normal((size, size, 3))
        proj = rng.uniform(0.5, 1.5, size=(size, size, 2))

        def fn(x, experts, routing, bias, proj=proj):
            q = nn.CondConvParams(experts=experts, routing=routing, bias=bias)
            return _scalar(nn.cond_conv(x, q), proj)

        arrays = [x, value_of(p.experts), value_of(p.routing), value_of(p.bias)]
        results.append(fd_check(f"cond_conv({size}x{size})", fn, arrays,
                                max_coords=40, rng=rng))


def _residual_gate_check(results, rng, sizes):
    for size in sizes:
        x = rng.standard_normal((size, size, 3))
        b = rng.standard_normal((size, size, 3))
        proj = rng.uniform(0.5, 1.5, size=(size, size, 3))
        results.append(fd_check(
            f"residual_gate({size}x{size})",
            lambda x, b, proj=proj: _scalar(residual_gate(x, b), proj),
            [x, b], rng=rng))


def _loss_checks(results, rng, sizes):
    for size in sizes:
        label = (rng.uniform(0, 1, (size, size, 1)) > 0.7).astype(np.float64)
        label.reshape(-1)[0] = 1.0      # guarantee both classes
        label.reshape(-1)[1] = 0.0
        z = rng.standard_normal((size, size, 1))
        w = LossWeights(negative_weight=0.3, positive_weight=0.7,
                        balance_scale=1.1, positive_threshold=0.3)
        results.append(fd_check(
            f"weighted_bce({size}x{size})",
            lambda z, label=label, w=w: weighted_bce(label, ad.sigmoid(z), w),
            [z], rng=rng))

        zs = [rng.standard_normal((size, size, 1)) for _ in range(4)]

        def fn(z1, z2, z3, zf, label=label):
            out = SideOutputs(fused=ad.sigmoid(zf),
                              sides=(ad.sigmoid(z1), ad.sigmoid(z2), ad.sigmoid(z3)))
            return detection_loss(label, out, 1.1, 0.3)

        results.append(fd_check(f"detection_loss({size}x{size})", fn, zs, rng=rng))


def _net_check(results, rng, size):
    cfg = NetworkConfig(blocks=1, channels=4, reduction=0.5, windows=(4,),
                        terms=1, heads=2, refine_channels=(4, 6, 8))
    params = init_params(cfg, rng)
    # zero-init biases put relu preactivations exactly on the kink wherever a
    # receptive field is fully gated off; jitter every leaf off that point
    params = map_leaves(
        params, lambda _, v: value_of(v) + rng.uniform(0.02, 0.08, np.shape(value_of(v))))
    x = rng.uniform(0.1, 0.9, (size, size, 3))
    label = (rng.uniform(0, 1, (size, size, 1)) > 0.8).astype(np.float64)
    label.reshape(-1)[0] = 1.0
    label.reshape(-1)[1] = 0.0
    names, leaves = zip(*named_leaves(params))
    arrays = [x] + [value_of(a) for a in leaves]

    def fn(x, *flat, cfg=cfg, params=params, names=names, label=label):
        vals = dict(zip(names, flat))
        q = map_leaves(params, lambda name, _: vals[name])
        out = net_forward(x, cfg, q)
        return detection_loss(label, out, cfg.balance_scale, cfg.positive_threshold)

    # tight step: the composite has relu/pool kinks and h must stay inside
    # the linear neighbourhood of every one the probes graze
    results.append(fd_check("net_forward+loss", fn, arrays,
                            h=1e-6, max_coords=4, rng=rng))


def run_suite(scale="micro"):
    """All op checks at the requested scale; returns CheckResult list."""
    if scale not in ("micro", "small"):
        raise ValueError(f"scale must be micro|small, got {scale!r}")
    size = 4 if scale == "micro" else 8
    rng = stream(20240301, f"gradcheck.{scale}")
    results = []
    _mode_product_checks(results, rng, (3, 2, 2) if scale == "micro" else (4, 3, 3))
    _multilinear_checks(results, rng, (2, 2, 2) if scale == "micro" else (3, 3, 2))
    _multiscale_checks(results, rng, 4 if scale == "micro" else 6)
    _conv_checks(results, rng, size)
    trio = (4, 6, 8) if scale == "micro" else (8, 10, 12)
    _pool_check(results, rng, trio)
    _gate_check(results, rng, trio)
    _cond_conv_check(results, rng, trio)
    _residual_gate_check(results, rng, trio)
    _loss_checks(results, rng, (3, 4, 5) if scale == "micro" else (5, 6, 7))
    _net_check(results, rng, 8 if scale == "micro" else 12)
    return results


def format_results(results):
    lines = [f"{'op':<28}{'max rel err':>14}{'tol':>10}{'time':>9}  status"]
    for r in results:
        lines.append(f"{r.name:<28}{r.max_rel:>14.3e}{r.tolerance:>10.0e}"
                     f"{r.seconds:>8.2f}s  {'ok' if r.ok else 'FAIL'}")
    return "\n".join(lines)
