"""Reverse-mode automatic differentiation over numpy arrays.

A ``Tape`` records an append-only, topologically ordered list of nodes; each
non-leaf node keeps the closure that maps its output cotangent back to input
cotangents. ``Tape.backward`` walks the list once in reverse, accumulating
gradients, and is deterministic: two backward passes over independently built
but identical graphs produce bit-identical gradients.

Every op in this package follows the same duality: arguments may be plain
ndarrays (or Python scalars) or ``Node`` handles. With ndarrays only, the op
computes and returns an ndarray; as soon as one argument is a ``Node``, the
result is recorded on that node's tape and a ``Node`` comes back. Forward
inference therefore pays no taping cost, and composite layers differentiate
for free.
"""

from __future__ import annotations

import numpy as np

from .errors import GeometryError


class Node:
    """Handle for one recorded value. Leaves have no vjp."""

    __slots__ = ("tape", "node_id", "value", "name", "grad", "_parents", "_vjp")

    def __init__(self, tape, node_id, value, name, parents, vjp):
        self.tape = tape
        self.node_id = node_id
        self.value = value
        self.name = name
        self.grad = None
        self._parents = parents
        self._vjp = vjp

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Node(id={self.node_id}, name={self.name!r}, shape={self.value.shape})"


class Tape:
    def __init__(self):
        self.nodes: list[Node] = []

    def leaf(self, value, name=None):
        """Record an input or parameter array."""
        arr = np.asarray(value, dtype=np.float64)
        node = Node(self, len(self.nodes), arr, name, (), None)
        self.nodes.append(node)
        return node

    def record(self, value, inputs, vjp, name=None):
        """Record an op result. ``vjp(g)`` must return one cotangent per
        entry of ``inputs``; entries for non-Node inputs are ignored."""
        parents = tuple((i, x) for i, x in enumerate(inputs) if isinstance(x, Node))
        for _, p in parents:
            if p.tape is not self:
                raise GeometryError("op mixes nodes from different tapes")
        node = Node(self, len(self.nodes), value, name, parents, vjp)
        self.nodes.append(node)
        return node

    def backward(self, loss):
        """Accumulate d(loss)/d(node) for every node reachable from ``loss``.

        Returns a dict keyed by node_id holding leaf gradients (zeros for
        leaves the loss does not depend on); also stashes the gradient on
        each visited node's ``.grad``.
        """
        if not isinstance(loss, Node) or loss.tape is not self:
            raise GeometryError("loss node does not belong to this tape")
        if loss.value.size != 1:
            raise GeometryError(f"loss must be scalar, got shape {loss.value.shape}")
        for node in self.nodes:
            node.grad = None
        pending = {loss.node_id: np.ones_like(loss.value)}
        for node in reversed(self.nodes):
            g = pending.pop(node.node_id, None)
            if g is None:
                continue
            node.grad = g
            if node._vjp is None:
                continue
            parts = node._vjp(g)
            for pos, parent in node._parents:
                pg = parts[pos]
                if pg.shape != parent.value.shape:
                    raise GeometryError(
                        f"vjp of {node.name!r} produced shape {pg.shape} "
                        f"for parent of shape {parent.value.shape}")
                acc = pending.get(parent.node_id)
                pending[parent.node_id] = pg if acc is None else acc + pg
        out = {}
        for node in self.nodes:
            if node._vjp is None:
                if node.grad is None:
                    node.grad = np.zeros_like(node.value)
                out[node.node_id] = node.grad
        return out


def value_of(x):
    """Underlying ndarray of a Node, or the argument coerced to ndarray."""
    if isinstance(x, Node):
        return x.value
    return np.asarray(x, dtype=np.float64)


def tape_of(*xs):
    for x in xs:
        if isinstance(x, Node):
            return x.tape
    return None


def _unbroadcast(g, shape):
    # Reduce a broadcast cotangent back onto `shape`.
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise and arithmetic ops


def add(x, y):
    xv, yv = value_of(x), value_of(y)
    out = xv + yv
    tape = tape_of(x, y)
    if tape is None:
        return out
    return tape.record(
        out, (x, y),
        lambda g: (_unbroadcast(g, xv.shape), _unbroadcast(g, yv.shape)),
        "add")


def sub(x, y):
    xv, yv = value_of(x), value_of(y)
    out = xv - yv
    tape = tape_of(x, y)
    if tape is None:
        return out
    return tape.record(
        out, (x, y),
        lambda g: (_unbroadcast(g, xv.shape), _unbroadcast(-g, yv.shape)),
        "sub")


def mul(x, y):
    xv, yv = value_of(x), value_of(y)
    out = xv * yv
    tape = tape_of(x, y)
    if tape is None:
        return out
    return tape.record(
        out, (x, y),
        lambda g: (_unbroadcast(g * yv, xv.shape), _unbroadcast(g * xv, yv.shape)),
        "mul")


def neg(x):
    xv = value_of(x)
    tape = tape_of(x)
    if tape is None:
        return -xv
    return tape.record(-xv, (x,), lambda g: (-g,), "neg")


def log(x):
    xv = value_of(x)
    out = np.log(xv)
    tape = tape_of(x)
    if tape is None:
        return out
    return tape.record(out, (x,), lambda g: (g / xv,), "log")


def sigmoid(x):
    xv = value_of(x)
    out = np.empty_like(xv)
    pos = xv >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-xv[pos]))
    ex = np.exp(xv[~pos])
    out[~pos] = ex / (1.0 + ex)
    tape = tape_of(x)
    if tape is None:
        return out
    return tape.record(out, (x,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def relu(x):
    xv = value_of(x)
    out = np.maximum(xv, 0.0)
    tape = tape_of(x)
    if tape is None:
        return out
    return tape.record(out, (x,), lambda g: (g * (xv > 0.0),), "relu")


def clamp(x, lo, hi):
    xv = value_of(x)
    out = np.clip(xv, lo, hi)
    tape = tape_of(x)
    if tape is None:
        return out
    inside = (xv > lo) & (xv < hi)
    return tape.record(out, (x,), lambda g: (g * inside,), "clamp")


def reduce_sum(x, axis=None):
    xv = value_of(x)
    out = np.asarray(xv.sum(axis=axis))
    tape = tape_of(x)
    if tape is None:
        return out

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, xv.shape).copy(),)
        ax = axis if isinstance(axis, tuple) else (axis,)
        ax = tuple(a % xv.ndim for a in ax)
        ge = np.expand_dims(g, ax)
        return (np.broadcast_to(ge, xv.shape).copy(),)

    return tape.record(out, (x,), vjp, "reduce_sum")


def reduce_mean(x, axis=None):
    xv = value_of(x)
    n = xv.size if axis is None else np.prod(
        [xv.shape[a % xv.ndim] for a in (axis if isinstance(axis, tuple) else (axis,))])
    return mul(reduce_sum(x, axis), 1.0 / float(n))


def matvec(a, v):
    av, vv = value_of(a), value_of(v)
    if av.ndim != 2 or vv.ndim != 1 or av.shape[1] != vv.shape[0]:
        raise GeometryError(f"matvec shapes {av.shape} x {vv.shape}")
    out = av @ vv
    tape = tape_of(a, v)
    if tape is None:
        return out
    return tape.record(
        out, (a, v), lambda g: (np.outer(g, vv), av.T @ g), "matvec")


# ---------------------------------------------------------------------------
# shape ops


def reshape(x, shape):
    xv = value_of(x)
    out = xv.reshape(shape)
    tape = tape_of(x)
    if tape is None:
        return out
    return tape.record(out, (x,), lambda g: (g.reshape(xv.shape),), "reshape")


def transpose(x, axes):
    xv = value_of(x)
    out = xv.transpose(axes)
    tape = tape_of(x)
    if tape is None:
        return out
    inv = np.argsort(axes)
    return tape.record(out, (x,), lambda g: (g.transpose(inv),), "transpose")


def gather(x, idx, axis):
    """Take indices along one axis. Cotangent scatter-adds back."""
    xv = value_of(x)
    idx = np.asarray(idx, dtype=np.int64)
    out = np.take(xv, idx, axis=axis)
    tape = tape_of(x)
    if tape is None:
        return out

    def vjp(g):
        gx = np.zeros_like(xv)
        np.add.at(np.moveaxis(gx, axis, 0), idx, np.moveaxis(g, axis, 0))
        return (gx,)

    return tape.record(out, (x,), vjp, "gather")


def slice_axes(x, key):
    """Basic slicing (tuple of slices). Cotangent zero-pads back."""
    xv = value_of(x)
    out = xv[key]
    tape = tape_of(x)
    if tape is None:
        return out

    def vjp(g):
        gx = np.zeros_like(xv)
        gx[key] = g
        return (gx,)

    return tape.record(out, (x,), vjp, "slice")


def pad_zero(x, pads):
    """Constant-zero pad; ``pads`` is ((before, after), ...) per axis."""
    xv = value_of(x)
    out = np.pad(xv, pads)
    tape = tape_of(x)
    if tape is None:
        return out
    key = tuple(slice(b, b + s) for (b, _), s in zip(pads, xv.shape))
    return tape.record(out, (x,), lambda g: (g[key],), "pad_zero")


def concat(xs, axis):
    vals = [value_of(x) for x in xs]
    out = np.concatenate(vals, axis=axis)
    tape = tape_of(*xs)
    if tape is None:
        return out
    sizes = [v.shape[axis] for v in vals]
    offsets = np.cumsum([0] + sizes)

    def vjp(g):
        gm = np.moveaxis(g, axis, 0)
        return tuple(
            np.moveaxis(gm[offsets[i]:offsets[i + 1]], 0, axis)
            for i in range(len(vals)))

    return tape.record(out, tuple(xs), vjp, "concat")


# ---------------------------------------------------------------------------
# resize helpers (compositions of gather / slicing)


def _reflect_indices(n, before, after):
    # Mirror without edge duplication; degrades to periodic reflection when a
    # pad exceeds the axis (np.pad would refuse), and to clamping for n == 1.
    idx = np.arange(-before, n + after)
    if n == 1:
        return np.zeros(idx.size, np.int64)
    period = 2 * n - 2
    idx = np.abs(idx) % period
    return np.where(idx >= n, period - idx, idx).astype(np.int64)


def pad_reflect_2d(x, pt, pb, pl, pr):
    """Reflect-pad the two leading (spatial) axes."""
    xv = value_of(x)
    out = x
    if pt or pb:
        out = gather(out, _reflect_indices(xv.shape[0], pt, pb), 0)
    if pl or pr:
        out = gather(out, _reflect_indices(xv.shape[1], pl, pr), 1)
    return out


def upsample_nearest(x, fy, fx):
    xv = value_of(x)
    out = x
    if fy > 1:
        out = gather(out, np.repeat(np.arange(xv.shape[0]), fy), 0)
    if fx > 1:
        out = gather(out, np.repeat(np.arange(xv.shape[1]), fx), 1)
    return out


def downsample_nearest(x, fy, fx):
    xv = value_of(x)
    ndim = xv.ndim
    key = (slice(None, None, fy), slice(None, None, fx)) + (slice(None),) * (ndim - 2)
    return slice_axes(x, key)


# ---------------------------------------------------------------------------
# finite differences (test oracle)


def finite_diff_grad(f, x, h=1e-3):
    """Central-difference gradient of a scalar function of one array."""
    x = np.array(x, dtype=np.float64)  # private copy, mutated in place below
    grad = np.zeros_like(x)
    flat = x.ravel()
    gflat = grad.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(f(x))
        flat[i] = orig - h
        fm = float(f(x))
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad
