"""Dense float64 tensors with tape-based reverse-mode differentiation.

Feature maps are laid out row-major with channels innermost, either as a
single map ``(H, W, C)`` or a batch ``(B, H, W, C)``.  Every operation that
involves a tensor with ``requires_grad`` records a node holding its parents
and a backward rule; :func:`backward` orders those nodes into a tape and
replays it in reverse.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit

from .errors import ContractError, DimensionError, DomainError

__all__ = [
    "Tensor",
    "as_tensor",
    "record",
    "backward",
    "build_tape",
    "conv1x1",
    "conv3x3",
    "softmax",
    "sigmoid",
    "relu",
    "exp",
    "log",
    "floor_min",
    "concat",
    "matmul",
    "mse",
    "straight_through",
    "pixel_shuffle",
]


class Tensor:
    """A float64 array plus the bookkeeping needed for reverse mode."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")
    __array_priority__ = 1000

    def __init__(self, data, requires_grad=False):
        self.data = np.array(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None
        self.op = "leaf"

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def is_leaf(self):
        return self._backward is None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op}{flag})"

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.data)

    # arithmetic -----------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other):
        return add(as_tensor(other), neg(self))

    def __neg__(self):
        return neg(self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return mul(self, reciprocal(other))
        return mul(self, 1.0 / np.asarray(other, dtype=np.float64))

    def __rtruediv__(self, other):
        return mul(as_tensor(other), reciprocal(self))

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        total = reduce_sum(self, axis, keepdims)
        count = self.data.size // max(total.data.size, 1)
        return total * (1.0 / count)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)


def as_tensor(value):
    return value if isinstance(value, Tensor) else Tensor(value)


def record(data, parents, backward_fn, op):
    """Wrap ``data`` as the output of an op.

    ``backward_fn(grad)`` must return one gradient (or ``None``) per parent.
    Nothing is recorded when no parent requires a gradient.
    """
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.op = op
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# elementwise -------------------------------------------------------------

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape

    def back(g):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return record(a.data + b.data, (a, b), back, "add")


def neg(a):
    return record(-a.data, (a,), lambda g: (-g,), "neg")


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data

    def back(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return record(ad * bd, (a, b), back, "mul")


def reciprocal(a):
    out = 1.0 / a.data
    return record(out, (a,), lambda g: (-g * out * out,), "reciprocal")


def exp(a):
    out = np.exp(a.data)
    return record(out, (a,), lambda g: (g * out,), "exp")


def log(a):
    x = a.data
    if np.any(x <= 0):
        raise DomainError("log of a non-positive value")
    return record(np.log(x), (a,), lambda g: (g / x,), "log")


def floor_min(a, floor):
    """``max(a, floor)``; gradient is zero where the floor is active."""
    x = a.data
    keep = x >= floor
    return record(np.where(keep, x, floor), (a,), lambda g: (g * keep,), "floor")


def relu(a):
    x = a.data
    keep = x > 0
    return record(x * keep, (a,), lambda g: (g * keep,), "relu")


def sigmoid(a):
    """Logistic function; plain floats and arrays are returned unwrapped."""
    if not isinstance(a, Tensor):
        out = expit(np.asarray(a, dtype=np.float64))
        return float(out) if out.ndim == 0 else out
    out = expit(a.data)
    return record(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def straight_through(soft, threshold=0.5):
    """Hard 0/1 step in the forward pass, identity Jacobian in the backward pass."""
    hard = (soft.data > threshold).astype(np.float64)
    return record(hard, (soft,), lambda g: (g,), "straight_through")


# reductions and shape ------------------------------------------------------

def reduce_sum(a, axis=None, keepdims=False):
    shape = a.shape

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return record(np.asarray(a.data.sum(axis=axis, keepdims=keepdims)), (a,), back, "sum")


def reshape(a, shape):
    old = a.shape
    return record(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),), "reshape")


def transpose(a, axes=None):
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inverse = tuple(np.argsort(axes))
    return record(a.data.transpose(axes), (a,), lambda g: (g.transpose(inverse),), "transpose")


def take(a, index):
    shape = a.shape
    fancy = isinstance(index, np.ndarray) or (
        isinstance(index, tuple) and any(isinstance(i, (np.ndarray, list)) for i in index)
    )

    def back(g):
        full = np.zeros(shape)
        if fancy:
            np.add.at(full, index, g)
        else:
            full[index] += g
        return (full,)

    return record(np.array(a.data[index]), (a,), back, "index")


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def back(g):
        return tuple(np.split(g, splits, axis=axis))

    return record(np.concatenate([t.data for t in tensors], axis=axis), tensors, back, "concat")


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    if ad.shape[-1] != bd.shape[-2]:
        raise DimensionError(f"matmul inner dimensions {ad.shape} @ {bd.shape}")

    def back(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        gb = np.swapaxes(ad, -1, -2) @ g
        return _unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape)

    return record(ad @ bd, (a, b), back, "matmul")


# network ops -----------------------------------------------------------------

def conv1x1(x, weight, bias=None):
    """Per-position ``x @ weight + bias`` over the trailing channel axis."""
    x, weight = as_tensor(x), as_tensor(weight)
    if weight.ndim != 2 or x.shape[-1] != weight.shape[0]:
        raise DimensionError(
            f"conv1x1 expects weight ({x.shape[-1]}, C_out), got {weight.shape}"
        )
    xd, wd = x.data, weight.data
    flat = xd.reshape(-1, xd.shape[-1])
    out = (flat @ wd).reshape(xd.shape[:-1] + (wd.shape[1],))
    parents = [x, weight]
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (wd.shape[1],):
            raise DimensionError(f"conv1x1 bias must have shape ({wd.shape[1]},)")
        out = out + bias.data
        parents.append(bias)

    def back(g):
        g2 = g.reshape(-1, wd.shape[1])
        gx = (g2 @ wd.T).reshape(xd.shape)
        gw = flat.T @ g2
        if bias is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    return record(out, parents, back, "conv1x1")


def _patches3x3(xd):
    h, w = xd.shape[-3], xd.shape[-2]
    pad = [(0, 0)] * (xd.ndim - 3) + [(1, 1), (1, 1), (0, 0)]
    xp = np.pad(xd, pad)
    cols = [xp[..., dy:dy + h, dx:dx + w, :] for dy in range(3) for dx in range(3)]
    return np.concatenate(cols, axis=-1)


def conv3x3(x, weight, bias=None):
    """3x3 cross-correlation with zero padding 1; ``weight`` is ``(3, 3, C_in, C_out)``."""
    x, weight = as_tensor(x), as_tensor(weight)
    xd, wd = x.data, weight.data
    if xd.ndim < 3 or xd.shape[-3] < 1 or xd.shape[-2] < 1:
        raise DimensionError(f"conv3x3 needs an (..., H, W, C) input, got {xd.shape}")
    if wd.shape[:3] != (3, 3, xd.shape[-1]) or wd.ndim != 4:
        raise DimensionError(f"conv3x3 weight {wd.shape} incompatible with input {xd.shape}")
    cin, cout = wd.shape[2], wd.shape[3]
    cols = _patches3x3(xd)
    flat = cols.reshape(-1, 9 * cin)
    wmat = wd.reshape(9 * cin, cout)
    out = (flat @ wmat).reshape(xd.shape[:-1] + (cout,))
    parents = [x, weight]
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (cout,):
            raise DimensionError(f"conv3x3 bias must have shape ({cout},)")
        out = out + bias.data
        parents.append(bias)

    def back(g):
        g2 = g.reshape(-1, cout)
        gw = (flat.T @ g2).reshape(wd.shape)
        flipped = wd[::-1, ::-1].transpose(0, 1, 3, 2).reshape(9 * cout, cin)
        gx = (_patches3x3(g).reshape(-1, 9 * cout) @ flipped).reshape(xd.shape)
        if bias is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    return record(out, parents, back, "conv3x3")


def softmax(logits, axis=-1):
    """Max-subtracted softmax; plain arrays in, plain arrays out."""
    wrapped = isinstance(logits, Tensor)
    z = logits.data if wrapped else np.asarray(logits, dtype=np.float64)
    if z.size == 0 or z.shape[axis] == 0:
        raise DomainError("softmax of an empty vector")
    e = np.exp(z - z.max(axis=axis, keepdims=True))
    out = e / e.sum(axis=axis, keepdims=True)
    if not wrapped:
        return out

    def back(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return record(out, (logits,), back, "softmax")


def mse(pred, target):
    diff = pred - as_tensor(target)
    return (diff * diff).mean()


def pixel_shuffle(x, scale):
    """Rearrange ``(B, H, W, C*s*s)`` into ``(B, H*s, W*s, C)``."""
    b, h, w, c = x.shape
    if c % (scale * scale):
        raise DimensionError(f"channels {c} not divisible by scale^2 = {scale * scale}")
    co = c // (scale * scale)
    y = x.reshape(b, h, w, scale, scale, co)
    y = y.transpose(0, 1, 3, 2, 4, 5)
    return y.reshape(b, h * scale, w * scale, co)


# reverse pass -------------------------------------------------------------------

def build_tape(output):
    """Recorded nodes reachable from ``output`` in recording (topological) order."""
    order, seen = [], set()
    stack = [(output, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(output, grad=None):
    """Accumulate d(output)/d(leaf) into ``.grad`` of every requires-grad leaf."""
    if output.data.size != 1 and grad is None:
        raise ContractError(f"backward needs a scalar output, got shape {output.shape}")
    if not output.requires_grad:
        return
    tape = build_tape(output)
    grads = {id(output): np.ones_like(output.data) if grad is None else np.asarray(grad, dtype=np.float64)}
    for node in reversed(tape):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg
