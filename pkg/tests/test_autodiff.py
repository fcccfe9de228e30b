"""Tape mechanics and per-op gradients against central differences."""

import numpy as np
import pytest

import mtsedge.autodiff as ad
from mtsedge.autodiff import Tape, finite_diff_grad, value_of
from mtsedge.errors import GeometryError

from conftest import make_rng


def grad_of(build, x0, *rest):
    """Analytic gradient of scalar build(x, *rest) wrt its first array."""
    tape = Tape()
    leaf = tape.leaf(np.asarray(x0, dtype=np.float64))
    grads = tape.backward(build(leaf, *rest))
    return grads[leaf.node_id]


def check_against_fd(build, x0, *rest, h=1e-5, rtol=1e-5, atol=1e-7):
    a = grad_of(build, x0, *rest)
    n = finite_diff_grad(lambda x: float(value_of(build(x, *rest))), x0, h=h)
    np.testing.assert_allclose(a, n, rtol=rtol, atol=atol)


def test_leaf_and_constant_mixing():
    tape = Tape()
    x = tape.leaf(np.array([1.0, 2.0]))
    const = np.array([3.0, 4.0])
    out = ad.reduce_sum(ad.mul(x, const))
    grads = tape.backward(out)
    np.testing.assert_array_equal(grads[x.node_id], const)


def test_unused_leaf_gets_zero_gradient():
    tape = Tape()
    x = tape.leaf(np.array([1.0, 2.0]))
    y = tape.leaf(np.array([5.0]))
    grads = tape.backward(ad.reduce_sum(ad.mul(x, x)))
    np.testing.assert_array_equal(grads[y.node_id], np.zeros(1))


def test_backward_rejects_nonscalar_and_foreign_nodes():
    tape = Tape()
    x = tape.leaf(np.ones(3))
    with pytest.raises(GeometryError):
        tape.backward(ad.mul(x, x))
    other = Tape()
    z = other.leaf(np.ones(3))
    with pytest.raises(GeometryError):
        tape.backward(ad.reduce_sum(ad.mul(z, z)))


def test_fanout_accumulates():
    # d/dx sum(x*x + 3x) = 2x + 3
    x0 = np.array([1.0, -2.0, 0.5])
    g = grad_of(lambda x: ad.reduce_sum(ad.add(ad.mul(x, x), ad.mul(3.0, x))), x0)
    np.testing.assert_allclose(g, 2 * x0 + 3)


def test_broadcast_gradients_unbroadcast():
    rng = make_rng("ad.broadcast")
    x0 = rng.standard_normal((4, 3))
    b0 = rng.standard_normal(3)       # broadcasts over rows
    tape = Tape()
    x, b = tape.leaf(x0), tape.leaf(b0)
    grads = tape.backward(ad.reduce_sum(ad.mul(ad.add(x, b), ad.add(x, b))))
    np.testing.assert_allclose(grads[b.node_id], (2 * (x0 + b0)).sum(axis=0))
    # scalar constant broadcast too
    tape2 = Tape()
    s = tape2.leaf(np.array(2.0))
    g2 = tape2.backward(ad.reduce_sum(ad.mul(s, x0)))[s.node_id]
    np.testing.assert_allclose(g2, x0.sum())


@pytest.mark.parametrize("name,build", [
    ("add", lambda x, y: ad.reduce_sum(ad.mul(ad.add(x, y), ad.add(x, y)))),
    ("sub", lambda x, y: ad.reduce_sum(ad.mul(ad.sub(x, y), ad.sub(x, y)))),
    ("mul", lambda x, y: ad.reduce_sum(ad.mul(ad.mul(x, y), x))),
])
def test_binary_ops_fd(name, build):
    rng = make_rng(f"ad.{name}")
    x0 = rng.standard_normal((3, 4))
    y0 = rng.standard_normal((3, 4))
    check_against_fd(lambda x: build(x, y0), x0)


def test_unary_ops_fd():
    rng = make_rng("ad.unary")
    x0 = rng.uniform(0.5, 2.0, (3, 3))
    check_against_fd(lambda x: ad.reduce_sum(ad.log(x)), x0)
    z0 = rng.standard_normal((3, 3))
    check_against_fd(lambda x: ad.reduce_sum(ad.sigmoid(x)), z0)
    check_against_fd(lambda x: ad.reduce_sum(ad.neg(ad.mul(x, x))), z0)
    spread = rng.permutation(np.linspace(-2.1, 2.3, 9)).reshape(3, 3)
    check_against_fd(lambda x: ad.reduce_sum(ad.mul(ad.relu(x), ad.relu(x))), spread)


def test_sigmoid_saturation_is_finite():
    tape = Tape()
    x = tape.leaf(np.array([-800.0, 800.0, 0.0]))
    out = ad.sigmoid(x)
    assert np.all(np.isfinite(value_of(out)))
    g = tape.backward(ad.reduce_sum(out))[x.node_id]
    assert np.all(np.isfinite(g))
    np.testing.assert_allclose(value_of(out)[:2], [0.0, 1.0], atol=1e-12)


def test_clamp_gradient_masks_outside():
    x0 = np.array([-2.0, 0.5, 2.0])
    g = grad_of(lambda x: ad.reduce_sum(ad.clamp(x, 0.0, 1.0)), x0)
    np.testing.assert_array_equal(g, [0.0, 1.0, 0.0])


def test_reduce_ops_fd():
    rng = make_rng("ad.reduce")
    x0 = rng.standard_normal((4, 5))
    w = rng.standard_normal(4)
    check_against_fd(
        lambda x: ad.reduce_sum(ad.mul(w, ad.reduce_mean(x, axis=1))), x0)
    check_against_fd(
        lambda x: ad.reduce_sum(ad.mul(ad.reduce_sum(x, axis=0),
                                       ad.reduce_sum(x, axis=0))), x0)


def test_matvec_fd():
    rng = make_rng("ad.matvec")
    a0 = rng.standard_normal((4, 3))
    v0 = rng.standard_normal(3)
    proj = rng.standard_normal(4)
    check_against_fd(lambda a: ad.reduce_sum(ad.mul(proj, ad.matvec(a, v0))), a0)
    tape = Tape()
    v = tape.leaf(v0)
    g = tape.backward(ad.reduce_sum(ad.mul(proj, ad.matvec(a0, v))))[v.node_id]
    np.testing.assert_allclose(g, a0.T @ proj)


def test_shape_ops_roundtrip_gradients():
    rng = make_rng("ad.shape")
    x0 = rng.standard_normal((2, 3, 4))
    proj = rng.standard_normal((4, 2, 3))
    check_against_fd(
        lambda x: ad.reduce_sum(ad.mul(proj, ad.transpose(x, (2, 0, 1)))), x0)
    proj2 = rng.standard_normal(24)
    check_against_fd(
        lambda x: ad.reduce_sum(ad.mul(proj2, ad.reshape(x, (24,)))), x0)


def test_gather_scatter_adds_for_repeats():
    x0 = np.array([1.0, 2.0, 3.0])
    g = grad_of(lambda x: ad.reduce_sum(ad.gather(x, [0, 0, 2], axis=0)), x0)
    np.testing.assert_array_equal(g, [2.0, 0.0, 1.0])


def test_slice_and_pad_gradients():
    rng = make_rng("ad.slice")
    x0 = rng.standard_normal((5, 6))
    key = (slice(1, 4), slice(0, 6, 2))
    proj = rng.standard_normal((3, 3))
    check_against_fd(
        lambda x: ad.reduce_sum(ad.mul(proj, ad.slice_axes(x, key))), x0)
    projp = rng.standard_normal((7, 8))
    check_against_fd(
        lambda x: ad.reduce_sum(ad.mul(projp, ad.pad_zero(x, ((1, 1), (0, 2))))), x0)


def test_concat_splits_gradient():
    rng = make_rng("ad.concat")
    a0 = rng.standard_normal((2, 2))
    b0 = rng.standard_normal((2, 3))
    proj = rng.standard_normal((2, 5))
    tape = Tape()
    a, b = tape.leaf(a0), tape.leaf(b0)
    grads = tape.backward(ad.reduce_sum(ad.mul(proj, ad.concat([a, b], axis=1))))
    np.testing.assert_array_equal(grads[a.node_id], proj[:, :2])
    np.testing.assert_array_equal(grads[b.node_id], proj[:, 2:])


def test_reflect_pad_matches_numpy_and_grad_sums():
    rng = make_rng("ad.reflect")
    x0 = rng.standard_normal((4, 5, 2))
    out = ad.pad_reflect_2d(x0, 2, 1, 0, 3)
    want = np.pad(x0, ((2, 1), (0, 3), (0, 0)), mode="reflect")
    np.testing.assert_array_equal(out, want)
    proj = rng.standard_normal(out.shape)
    check_against_fd(
        lambda x: ad.reduce_sum(ad.mul(proj, ad.pad_reflect_2d(x, 2, 1, 0, 3))), x0)
    # total gradient mass is conserved: every output cell reads one input cell
    g = grad_of(lambda x: ad.reduce_sum(ad.pad_reflect_2d(x, 2, 1, 0, 3)), x0)
    assert g.sum() == pytest.approx(out.size / x0.shape[2] * x0.shape[2])


def test_resample_nearest_roundtrip():
    rng = make_rng("ad.resample")
    x0 = rng.standard_normal((3, 4, 2))
    up = ad.upsample_nearest(x0, 2, 3)
    assert up.shape == (6, 12, 2)
    np.testing.assert_array_equal(up[::2, ::3], x0)   # block corners
    np.testing.assert_array_equal(ad.downsample_nearest(up, 2, 3), x0)
    proj = rng.standard_normal((6, 12, 2))
    check_against_fd(
        lambda x: ad.reduce_sum(ad.mul(proj, ad.upsample_nearest(x, 2, 3))), x0)
    proj2 = rng.standard_normal((2, 2, 2))
    check_against_fd(
        lambda x: ad.reduce_sum(ad.mul(proj2, ad.downsample_nearest(x, 2, 2))), x0)


def test_second_backward_is_consistent():
    # two backward calls on the same tape give identical leaf gradients
    rng = make_rng("ad.twice")
    x0 = rng.standard_normal((3, 3))
    tape = Tape()
    x = tape.leaf(x0)
    loss = ad.reduce_sum(ad.mul(ad.sigmoid(x), x))
    g1 = tape.backward(loss)[x.node_id].copy()
    g2 = tape.backward(loss)[x.node_id]
    np.testing.assert_array_equal(g1, g2)
