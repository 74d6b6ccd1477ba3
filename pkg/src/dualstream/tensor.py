"""Reverse-mode differentiable tensors on a numpy float64 substrate.

Every value in the package is a ``Tensor``: a dense float64 array plus the
bookkeeping needed to replay the forward computation backwards.  Operations
build a define-by-run graph; ``backward`` walks it once in reverse
topological order and accumulates gradients into every reachable
``Parameter``.  Accumulation is additive, so callers zero gradients
explicitly between steps (see ``zero_grads``).

Design points:
  * float64 everywhere; desk-scale sizes make this affordable and it keeps
    finite-difference oracles tight.
  * graphs live only as long as the output tensors that reference them;
    nothing is retained across steps.
  * the backward walk is deterministic: parents are visited in recording
    order, so two backward passes over an identical graph produce
    bit-identical gradients.
"""

from __future__ import annotations

import numpy as np
from scipy.special import erf as _erf, expit as _expit

from .errors import ContractError, DimensionError

_AXIS_ROLES = {"batch", "speaker", "time", "channel", "head"}

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)


class Tensor:
    """Dense float64 array with optional axis-role labels and a grad tape.

    ``parents`` and ``vjp`` describe how this tensor was produced: ``vjp``
    maps the incoming gradient to one contribution per parent.  Leaf
    tensors (constants, parameters) have neither.
    """

    __slots__ = ("data", "parents", "vjp", "axis_roles")

    def __init__(self, data, parents=(), vjp=None, axis_roles=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.parents = tuple(parents)
        self.vjp = vjp
        if axis_roles is not None:
            axis_roles = tuple(axis_roles)
            if len(axis_roles) != self.data.ndim:
                raise ContractError(
                    f"axis_roles length {len(axis_roles)} != ndim {self.data.ndim}"
                )
            bad = set(axis_roles) - _AXIS_ROLES
            if bad:
                raise ContractError(f"unknown axis roles: {sorted(bad)}")
        self.axis_roles = axis_roles

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
        return float(self.data.reshape(()))

    def __repr__(self):
        return f"Tensor(shape={self.shape})"

    # operator sugar; all arithmetic lives in the module-level functions
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise ContractError("tensor/tensor division is not supported; "
                                "multiply by power(x, -1.0) instead")
        return mul(self, 1.0 / float(other))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, p):
        return power(self, p)

    def __getitem__(self, key):
        return getitem(self, key)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)


class Parameter(Tensor):
    """Learnable leaf tensor: a value plus an additively-updated grad slot."""

    __slots__ = ("grad", "name")

    def __init__(self, data, name):
        super().__init__(data)
        self.grad = np.zeros_like(self.data)
        self.name = str(name)

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape})"


def _lift(x):
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` following numpy broadcasting rules."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b):
    a, b = _lift(a), _lift(b)
    out = a.data + b.data

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Tensor(out, (a, b), vjp)


def sub(a, b):
    a, b = _lift(a), _lift(b)
    out = a.data - b.data

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return Tensor(out, (a, b), vjp)


def mul(a, b):
    a, b = _lift(a), _lift(b)
    out = a.data * b.data

    def vjp(g):
        return (_unbroadcast(g * b.data, a.shape),
                _unbroadcast(g * a.data, b.shape))

    return Tensor(out, (a, b), vjp)


def neg(a):
    a = _lift(a)
    return Tensor(-a.data, (a,), lambda g: (-g,))


def power(a, p):
    """Raise to a constant real exponent."""
    a = _lift(a)
    p = float(p)
    out = a.data ** p

    def vjp(g):
        return (g * p * a.data ** (p - 1.0),)

    return Tensor(out, (a,), vjp)


def texp(a):
    a = _lift(a)
    out = np.exp(a.data)
    return Tensor(out, (a,), lambda g: (g * out,))


def tlog(a):
    a = _lift(a)
    return Tensor(np.log(a.data), (a,), lambda g: (g / a.data,))


def tanh(a):
    a = _lift(a)
    out = np.tanh(a.data)
    return Tensor(out, (a,), lambda g: (g * (1.0 - out * out),))


def sigmoid(a):
    a = _lift(a)
    out = _expit(a.data)
    return Tensor(out, (a,), lambda g: (g * out * (1.0 - out),))


def softplus(a):
    """log(1 + exp(x)) in the overflow-safe split form."""
    a = _lift(a)
    x = a.data
    out = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))

    def vjp(g):
        return (g * _expit(x),)

    return Tensor(out, (a,), vjp)


def gelu(a):
    """Gaussian-error-linear activation, exact erf form (smooth everywhere)."""
    a = _lift(a)
    x = a.data
    phi = 0.5 * (1.0 + _erf(x * _INV_SQRT2))
    out = x * phi

    def vjp(g):
        d = phi + x * np.exp(-0.5 * x * x) * _INV_SQRT2PI
        return (g * d,)

    return Tensor(out, (a,), vjp)


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a, b):
    """Batched matrix product over the last two axes.

    Leading axes broadcast numpy-style; gradients are summed back down to
    each operand's shape.
    """
    a, b = _lift(a), _lift(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(
            f"matmul needs >=2-d operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(
            f"matmul inner dimensions disagree: {a.shape} @ {b.shape}")
    for da, db in zip(a.shape[-3::-1], b.shape[-3::-1]):
        if da != db and da != 1 and db != 1:
            raise DimensionError(
                f"matmul batch dimensions incompatible: {a.shape} @ {b.shape}")
    out = a.data @ b.data

    def vjp(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return Tensor(out, (a, b), vjp)


def linear(x, w, b):
    """Affine map over the last axis: x @ w + b."""
    x, w, b = _lift(x), _lift(w), _lift(b)
    if w.ndim != 2 or x.shape[-1] != w.shape[0]:
        raise DimensionError(
            f"linear: input {x.shape} incompatible with weight {w.shape}")
    if b.shape != (w.shape[1],):
        raise DimensionError(
            f"linear: bias {b.shape} incompatible with weight {w.shape}")
    if x.ndim == 1:
        y = matmul(reshape(x, (1, x.shape[0])), w)
        return reshape(add(y, b), (w.shape[1],))
    return add(matmul(x, w), b)


# ---------------------------------------------------------------------------
# reductions and normalization


def tsum(a, axis=None, keepdims=False):
    a = _lift(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return Tensor(out, (a,), vjp)


def tmean(a, axis=None, keepdims=False):
    a = _lift(a)
    if axis is None:
        n = a.size
    else:
        n = a.shape[axis]
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / float(n))


def softmax(a, axis):
    """Max-shifted exp-normalize along ``axis``; rows sum to one."""
    a = _lift(a)
    if not -a.ndim <= axis < a.ndim:
        raise DimensionError(f"softmax axis {axis} invalid for shape {a.shape}")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        inner = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - inner),)

    return Tensor(out, (a,), vjp)


def layer_norm(x, gamma, beta, eps=1e-5):
    """Normalize the last axis to zero mean / unit variance, then scale+shift."""
    x, gamma, beta = _lift(x), _lift(gamma), _lift(beta)
    if eps <= 0:
        raise ContractError(f"layer_norm eps must be > 0, got {eps}")
    c = x.shape[-1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise DimensionError(
            f"layer_norm: gamma {gamma.shape} / beta {beta.shape} "
            f"must match channel axis of {x.shape}")
    mu = tmean(x, axis=-1, keepdims=True)
    centered = sub(x, mu)
    var = tmean(mul(centered, centered), axis=-1, keepdims=True)
    inv = power(add(var, eps), -0.5)
    return add(mul(mul(centered, inv), gamma), beta)


# ---------------------------------------------------------------------------
# shape surgery


def reshape(a, shape):
    a = _lift(a)
    out = a.data.reshape(shape)
    return Tensor(out, (a,), lambda g: (g.reshape(a.shape),))


def transpose(a, axes):
    a = _lift(a)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    out = a.data.transpose(axes)
    return Tensor(out, (a,), lambda g: (g.transpose(inv),))


def concat(parts, axis):
    parts = [_lift(p) for p in parts]
    out = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def vjp(g):
        sl = [slice(None)] * g.ndim
        grads = []
        for i in range(len(parts)):
            sl[axis] = slice(offsets[i], offsets[i + 1])
            grads.append(g[tuple(sl)])
        return tuple(grads)

    return Tensor(out, tuple(parts), vjp)


def getitem(a, key):
    """Basic (int/slice) indexing; the gradient scatters into zeros."""
    a = _lift(a)
    out = a.data[key]
    out = np.array(out)  # detach from the parent's buffer

    def vjp(g):
        z = np.zeros(a.shape)
        z[key] = g
        return (z,)

    return Tensor(out, (a,), vjp)


def pad_axis(a, axis, before, after):
    """Zero-pad one axis."""
    a = _lift(a)
    widths = [(0, 0)] * a.ndim
    widths[axis] = (before, after)
    out = np.pad(a.data, widths)

    def vjp(g):
        sl = [slice(None)] * a.ndim
        sl[axis] = slice(before, before + a.shape[axis])
        return (g[tuple(sl)],)

    return Tensor(out, (a,), vjp)


def broadcast_to(a, shape):
    a = _lift(a)
    shape = tuple(shape)
    out = np.ascontiguousarray(np.broadcast_to(a.data, shape))
    return Tensor(out, (a,), lambda g: (_unbroadcast(g, a.shape),))


def take_rows(a, idx):
    """Gather rows along axis 0 by an integer index array."""
    a = _lift(a)
    idx = np.asarray(idx, dtype=np.intp)
    out = a.data[idx]

    def vjp(g):
        z = np.zeros(a.shape)
        np.add.at(z, idx, g)
        return (z,)

    return Tensor(out, (a,), vjp)


# ---------------------------------------------------------------------------
# backward pass


def backward(loss):
    """Accumulate d(loss)/d(param) into every reachable Parameter's grad.

    ``loss`` must be a scalar produced by a recorded forward computation.
    Gradients add onto whatever is already in Parameter.grad.
    """
    if not isinstance(loss, Tensor):
        raise ContractError("backward expects a Tensor")
    if loss.size != 1:
        raise ContractError(
            f"backward expects a scalar loss, got shape {loss.shape}")

    topo = []
    seen = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in reversed(node.parents):
            if id(p) not in seen:
                stack.append((p, False))

    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(topo):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if isinstance(node, Parameter):
            node.grad += g
            continue
        if node.vjp is None:
            continue
        contribs = node.vjp(g)
        for parent, c in zip(node.parents, contribs):
            if c is None:
                continue
            acc = grads.get(id(parent))
            grads[id(parent)] = c if acc is None else acc + c


def zero_grads(params):
    for p in params:
        p.grad[...] = 0.0


def init_uniform(rng, fan_in, shape):
    """Symmetric uniform init scaled by fan-in: U(-1/sqrt(fan_in), +1/sqrt(fan_in))."""
    bound = 1.0 / np.sqrt(float(fan_in))
    return rng.uniform(-bound, bound, size=shape)
