"""Reverse-mode automatic differentiation over dense float64 arrays.

A small tape-based engine: exactly the ops a transformer encoder/decoder
with a softmax modulator head needs, and nothing else. Every forward op
checks its output for NaN/Inf; gradients are accumulated by walking the
recorded tape in reverse.
"""

import threading

import numpy as np
from scipy.special import ndtr

_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


class ShapeError(ValueError):
    """Operand shapes incompatible with the requested op."""


class NonFiniteError(ArithmeticError):
    """A forward op produced NaN or Inf."""


class GraphError(RuntimeError):
    """Misuse of the tape/backward machinery."""


class Tensor:
    """Dense float64 value, optionally tracked by the active tape."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        if not np.all(np.isfinite(self.data)):
            raise NonFiniteError("tensor created with non-finite values")

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def transpose(self, axes):
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return tensor_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tensor_mean(self, axis=axis, keepdims=keepdims)

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise GraphError("tensor/tensor division is not a supported op")
        return mul(self, 1.0 / float(other))

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


class _Node:
    __slots__ = ("op", "inputs", "output", "backward")

    def __init__(self, op, inputs, output, backward):
        self.op = op
        self.inputs = inputs
        self.output = output
        self.backward = backward


_tls = threading.local()


def _tape_stack():
    stack = getattr(_tls, "stack", None)
    if stack is None:
        stack = _tls.stack = []
    return stack


class Tape:
    """Ordered record of ops; context manager activates it for recording.

    Single-threaded during recording and backward. Distinct tapes may run
    concurrently on different threads.
    """

    def __init__(self):
        self.nodes = []

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc):
        _tape_stack().pop()
        return False


def active_tape():
    stack = _tape_stack()
    return stack[-1] if stack else None


def _coerce(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(op, inputs, out_data, backward_fn):
    tape = active_tape()
    track = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=track)
    if track:
        tape.nodes.append(_Node(op, inputs, out, backward_fn))
    return out


def _unbroadcast(g, shape):
    """Sum gradient g down to the given operand shape."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# ops
# ---------------------------------------------------------------------------

def matmul(a, b):
    a, b = _coerce(a), _coerce(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs matrices, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dims disagree: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    out = ad @ bd

    def bwd(g):
        ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), a.shape)
        gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, b.shape)
        return ga, gb

    return _record("matmul", (a, b), out, bwd)


def _binary(name, fwd, da, db):
    def op(a, b):
        a, b = _coerce(a), _coerce(b)
        try:
            out = fwd(a.data, b.data)
        except ValueError as exc:
            raise ShapeError(f"{name}: incompatible shapes {a.shape}, {b.shape}") from exc

        def bwd(g):
            return (_unbroadcast(da(g, a.data, b.data), a.shape),
                    _unbroadcast(db(g, a.data, b.data), b.shape))

        return _record(name, (a, b), out, bwd)

    op.__name__ = name
    return op


add = _binary("add", lambda x, y: x + y, lambda g, x, y: g, lambda g, x, y: g)
sub = _binary("sub", lambda x, y: x - y, lambda g, x, y: g, lambda g, x, y: -g)
mul = _binary("mul", lambda x, y: x * y, lambda g, x, y: g * y, lambda g, x, y: g * x)


def gelu(a):
    """Exact Gaussian-CDF GELU: x * Phi(x)."""
    a = _coerce(a)
    x = a.data
    phi = ndtr(x)
    out = x * phi

    def bwd(g):
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * x * x)
        return (g * (phi + x * pdf),)

    return _record("gelu", (a,), out, bwd)


def tanh(a):
    a = _coerce(a)
    out = np.tanh(a.data)

    def bwd(g):
        return (g * (1.0 - out * out),)

    return _record("tanh", (a,), out, bwd)


def softmax(a):
    """Numerically stable softmax over the last axis."""
    a = _coerce(a)
    x = a.data
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)

    def bwd(g):
        dot = (g * y).sum(axis=-1, keepdims=True)
        return (y * (g - dot),)

    return _record("softmax", (a,), y, bwd)


def layernorm(a, gain, bias, eps=1e-5):
    """Normalize the last axis to zero mean / unit variance, then affine."""
    a, gain, bias = _coerce(a), _coerce(gain), _coerce(bias)
    if eps <= 0:
        raise GraphError("layernorm eps must be positive")
    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gain.data + bias.data
    lead = tuple(range(x.ndim - 1))

    def bwd(g):
        dgain = _unbroadcast((g * xhat).sum(axis=lead), gain.shape)
        dbias = _unbroadcast(g.sum(axis=lead), bias.shape)
        dxhat = g * gain.data
        m1 = dxhat.mean(axis=-1, keepdims=True)
        m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
        dx = inv * (dxhat - m1 - xhat * m2)
        return dx, dgain, dbias

    return _record("layernorm", (a, gain, bias), out, bwd)


def reshape(a, shape):
    a = _coerce(a)
    out = a.data.reshape(shape)

    def bwd(g):
        return (g.reshape(a.data.shape),)

    return _record("reshape", (a,), out, bwd)


def transpose(a, axes):
    a = _coerce(a)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    out = a.data.transpose(axes)

    def bwd(g):
        return (g.transpose(inv),)

    return _record("transpose", (a,), out, bwd)


def concat(tensors, axis):
    tensors = tuple(_coerce(t) for t in tensors)
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _record("concat", tensors, out, bwd)


def tensor_sum(a, axis=None, keepdims=False):
    a = _coerce(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.data.shape).copy(),)

    return _record("sum", (a,), out, bwd)


def tensor_mean(a, axis=None, keepdims=False):
    a = _coerce(a)
    n = a.data.size if axis is None else a.data.shape[axis]
    s = tensor_sum(a, axis=axis, keepdims=keepdims)
    return mul(s, 1.0 / n)


def power_normalize(a):
    """Scale so the mean square over all elements is exactly 1."""
    a = _coerce(a)
    x = a.data
    ms = (x * x).mean()
    if ms == 0.0:
        raise GraphError("power_normalize: all-zero input")
    c = 1.0 / np.sqrt(ms)
    out = x * c
    n = x.size

    def bwd(g):
        s = (g * x).sum()
        return (c * g - (c ** 3 / n) * s * x,)

    return _record("power_normalize", (a,), out, bwd)


def straight_through(soft, hard_data):
    """Forward the hard values, pass gradients through the soft ones."""
    soft = _coerce(soft)
    delta = np.asarray(hard_data, dtype=np.float64) - soft.data
    return add(soft, Tensor(delta))


# ---------------------------------------------------------------------------
# backward pass
# ---------------------------------------------------------------------------

def backward(tape, loss, params=()):
    """Accumulate gradients for every requires_grad leaf reachable from loss.

    Leaves appearing in `params` but not reached on the tape get a zero
    gradient. Gradients land on `tensor.grad`, replacing previous values.
    """
    if not isinstance(loss, Tensor) or loss.data.size != 1:
        raise GraphError("backward requires a scalar loss tensor")
    grads = {id(loss): np.ones_like(loss.data)}
    produced = {id(node.output) for node in tape.nodes}
    leaves = {}
    for node in tape.nodes:
        for t in node.inputs:
            if t.requires_grad and id(t) not in produced:
                leaves[id(t)] = t
    for t in params:
        leaves.setdefault(id(t), t)

    for node in reversed(tape.nodes):
        g = grads.pop(id(node.output), None)
        if g is None:
            continue
        for t, gi in zip(node.inputs, node.backward(g)):
            if gi is None or not t.requires_grad:
                continue
            acc = grads.get(id(t))
            grads[id(t)] = gi if acc is None else acc + gi

    for tid, t in leaves.items():
        g = grads.get(tid)
        t.grad = np.array(g, dtype=np.float64) if g is not None else np.zeros_like(t.data)
