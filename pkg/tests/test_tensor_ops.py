"""Mode products, summed multilinear maps, and the windowed layer."""

import numpy as np
import pytest

import mtsedge.autodiff as ad
import mtsedge.tensor_ops as to
from mtsedge.autodiff import Tape, value_of
from mtsedge.errors import GeometryError
from mtsedge.tensor_ops import (
    MultiscaleParams,
    ScaleParams,
    TermFactors,
    make_multiscale_params,
    mode_product,
    multilinear_sum,
    multiscale_layer,
    patch_embed,
    patch_unembed,
    round_half_up,
)

from conftest import make_rng


def test_round_half_up():
    assert round_half_up(0.5) == 1
    assert round_half_up(1.5) == 2
    assert round_half_up(2.4) == 2
    assert round_half_up(2.6) == 3
    assert round_half_up(-0.5) == 0
    assert round_half_up(5.0599) == 5


def unfold(x, mode):
    return np.moveaxis(x, mode, 0).reshape(x.shape[mode], -1)


@pytest.mark.parametrize("mode", [0, 1, 2])
def test_mode_product_matches_unfolding(mode):
    rng = make_rng(f"to.unfold{mode}")
    x = rng.standard_normal((3, 4, 5))
    m = x.shape[mode] + 2
    a = rng.standard_normal((m, x.shape[mode]))
    out = mode_product(x, a, mode)
    np.testing.assert_allclose(unfold(out, mode), a @ unfold(x, mode),
                               rtol=1e-12, atol=1e-13)


def test_mode_product_rank4():
    rng = make_rng("to.rank4")
    x = rng.standard_normal((2, 4, 4, 3))
    a = rng.standard_normal((5, 4))
    out = mode_product(x, a, 1)
    assert value_of(out).shape == (2, 5, 4, 3)
    for p in range(2):
        np.testing.assert_allclose(
            unfold(value_of(out)[p], 0), a @ unfold(x[p], 0), rtol=1e-12)


def test_mode_product_rejects_bad_inputs():
    x = np.zeros((3, 4, 5))
    with pytest.raises(GeometryError):
        mode_product(x, np.zeros((2, 3, 1)), 0)     # not a matrix
    with pytest.raises(GeometryError):
        mode_product(x, np.zeros((2, 3)), 3)        # mode out of range
    with pytest.raises(GeometryError):
        mode_product(x, np.zeros((2, 3)), 1)        # extent mismatch


def kron_apply(x, factors):
    """Column-major Kronecker oracle: vec_F(out) = (A_last x ... x A_0) vec_F(x)."""
    big = factors[0]
    for a in factors[1:]:
        big = np.kron(a, big)
    out_shape = tuple(a.shape[0] for a in factors)
    return (big @ x.flatten(order="F")).reshape(out_shape, order="F")


@pytest.mark.parametrize("terms", [1, 2, 3])
def test_multilinear_sum_matches_kronecker(terms):
    rng = make_rng(f"to.kron{terms}")
    for _ in range(5):
        shape = tuple(rng.integers(2, 5, size=3))
        out_shape = tuple(rng.integers(1, 5, size=3))
        x = rng.standard_normal(shape)
        tlist = [[rng.standard_normal((out_shape[j], shape[j])) for j in range(3)]
                 for _ in range(terms)]
        got = multilinear_sum(x, tlist)
        want = sum(kron_apply(x, f) for f in tlist)
        np.testing.assert_allclose(got, want, rtol=1e-12, atol=1e-13)


def test_multilinear_sum_identity():
    rng = make_rng("to.mlid")
    x = rng.standard_normal((4, 5, 3))
    eyes = [[np.eye(4), np.eye(5), np.eye(3)]]
    np.testing.assert_allclose(multilinear_sum(x, eyes), x, rtol=1e-12)


def test_multilinear_sum_rejects_bad_terms():
    x = np.zeros((2, 3, 4))
    with pytest.raises(GeometryError):
        multilinear_sum(x, [])
    with pytest.raises(GeometryError):
        multilinear_sum(x, [[np.eye(2), np.eye(3)]])          # missing a factor
    with pytest.raises(GeometryError):
        multilinear_sum(x, [[np.eye(2), np.eye(3), np.eye(4)],
                            [np.eye(2), np.eye(3), np.zeros((5, 4))]])


def test_patch_embed_row_major_tiles():
    h, w, c, win = 4, 6, 2, 2
    x = np.arange(h * w * c, dtype=np.float64).reshape(h, w, c)
    tiles = patch_embed(x, win)
    assert tiles.shape == (6, 2, 2, 2)
    k = 0
    for gy in range(h // win):
        for gx in range(w // win):
            want = x[gy * win:(gy + 1) * win, gx * win:(gx + 1) * win]
            np.testing.assert_array_equal(tiles[k], want)
            k += 1


def test_patch_roundtrip_and_resized_tiles():
    rng = make_rng("to.patch")
    x = rng.standard_normal((6, 9, 2))
    np.testing.assert_array_equal(patch_unembed(patch_embed(x, 3), 3, 6, 9), x)
    with pytest.raises(GeometryError):
        patch_embed(x, 4)
    # shrunk tiles reassemble into a proportionally shrunk map
    tiles = patch_embed(x, 3)
    small = np.ascontiguousarray(tiles[:, :2, :2, :])
    out = patch_unembed(small, 3, 6, 9)
    assert out.shape == (4, 6, 2)
    np.testing.assert_array_equal(out[:2, :2], x[:2, :2])     # first tile corner


def test_make_multiscale_params_extents_and_count():
    rng = make_rng("to.make")
    ratio = np.sqrt(0.4)
    p = make_multiscale_params(3, 8, (8,), ratio, 3, rng)
    sc = p.scales[0]
    assert sc.window == 8 and sc.out_window == (5, 5)
    sizes = sum(f.size for t in sc.terms
                for f in (t.rows, t.cols, t.channels))
    assert sizes == 312
    assert all(t.rows.shape == (5, 8) and t.cols.shape == (5, 8)
               and t.channels.shape == (8, 3) for t in sc.terms)
    np.testing.assert_array_equal(p.bias, np.zeros(8))
    s = np.sqrt(6.0 / (8 + 5)) / np.sqrt(3)
    assert all(np.abs(t.rows).max() <= s for t in sc.terms)


def identity_layer(size, channels):
    eye = np.eye(size)
    return MultiscaleParams(
        in_channels=channels, out_channels=channels, ratio=1.0,
        scales=[ScaleParams(window=size, out_window=(size, size),
                            terms=[TermFactors(eye.copy(), eye.copy(),
                                               np.eye(channels))])],
        bias=np.zeros(channels))


def test_identity_configured_layer_reproduces_input():
    rng = make_rng("to.ident")
    x = rng.standard_normal((6, 6, 3))
    out = multiscale_layer(x, identity_layer(6, 3))
    np.testing.assert_allclose(out, x, rtol=1e-12, atol=1e-14)


def test_layer_is_affine_in_input():
    rng = make_rng("to.affine")
    p = make_multiscale_params(2, 3, (2, 4), np.sqrt(0.4), 2, rng)
    p.bias = rng.standard_normal(3)
    x1 = rng.standard_normal((8, 8, 2))
    x2 = rng.standard_normal((8, 8, 2))
    f1 = multiscale_layer(x1, p)
    f2 = multiscale_layer(x2, p)
    f12 = multiscale_layer(x1 + x2, p)
    np.testing.assert_allclose(f12, f1 + f2 - p.bias, rtol=1e-10, atol=1e-12)


def test_layer_output_extents():
    rng = make_rng("to.extent")
    p = make_multiscale_params(3, 4, (8, 16), np.sqrt(0.4), 2, rng)
    out = multiscale_layer(rng.standard_normal((16, 16, 3)), p)
    assert value_of(out).shape == (10, 10, 4)      # round_half_up(16*0.6325)
    up = make_multiscale_params(4, 3, (8, 16), 1 / np.sqrt(0.4), 2, rng)
    restored = multiscale_layer(value_of(out), up, out_hw=(16, 16))
    assert value_of(restored).shape == (16, 16, 3)
    # non-multiple extents reflect-pad internally and still land on target
    odd = multiscale_layer(rng.standard_normal((10, 14, 3)), p)
    assert value_of(odd).shape == (6, 9, 4)        # round_half_up of 6.32, 8.85


def test_layer_rejects_wrong_channels():
    rng = make_rng("to.chan")
    p = make_multiscale_params(3, 4, (4,), 0.5, 1, rng)
    with pytest.raises(GeometryError):
        multiscale_layer(rng.standard_normal((8, 8, 2)), p)


def test_layer_gradient_reaches_all_factors():
    rng = make_rng("to.grad")
    p = make_multiscale_params(2, 2, (2, 4), 0.7, 2, rng)
    x = rng.standard_normal((4, 4, 2))
    tape = Tape()
    leaf_map = {}

    def leafify(obj):
        if isinstance(obj, np.ndarray):
            node = tape.leaf(obj)
            leaf_map[id(node)] = node
            return node
        return obj

    q = MultiscaleParams(
        in_channels=p.in_channels, out_channels=p.out_channels, ratio=p.ratio,
        scales=[ScaleParams(window=s.window, out_window=s.out_window,
                            terms=[TermFactors(leafify(t.rows), leafify(t.cols),
                                               leafify(t.channels))
                                   for t in s.terms])
                for s in p.scales],
        bias=leafify(p.bias))
    out = multiscale_layer(x, q)
    grads = tape.backward(ad.reduce_sum(ad.mul(out, out)))
    for node in leaf_map.values():
        assert np.abs(grads[node.node_id]).max() > 0
