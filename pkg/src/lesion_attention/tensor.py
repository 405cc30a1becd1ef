"""Dense tensors with reverse-mode automatic differentiation.

Tensors wrap a numpy array. Every differentiable operation records its inputs
and a backward closure on the output tensor and stamps it with a global
sequence number; ``backward`` walks the reachable nodes in exactly the reverse
of their execution order. Graphs are confined to the thread that built them.
"""

import itertools
import threading
from contextlib import contextmanager

import numpy as np

from .errors import ContractError, DimensionError, NumericError, ParameterError
from .rng import stream

_seq = itertools.count()
_state = threading.local()


def is_grad_enabled():
    return getattr(_state, "enabled", True)


@contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    prev = is_grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class Tensor:
    """An n-dimensional array node in a gradient graph.

    Args:
        data: array-like payload. Python scalars and lists become float64.
        requires_grad: whether gradients should be accumulated into ``grad``.
        dtype: optional dtype override.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_seq", "name")

    def __init__(self, data, requires_grad=False, dtype=None, name=None):
        arr = np.array(data, dtype=dtype if dtype is not None else None, copy=True)
        if dtype is None and arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None
        self._seq = next(_seq)
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def is_leaf(self):
        return self._backward is None

    def numpy(self):
        return self.data

    def item(self):
        return self.data.item()

    def detach(self):
        return Tensor(self.data, dtype=self.data.dtype)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    def __len__(self):
        return len(self.data)

    def __getitem__(self, index):
        return take(self, index)

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(_as_tensor(other, self.dtype)))

    def __rsub__(self, other):
        return add(_as_tensor(other, self.dtype), neg(self))

    def __neg__(self):
        return neg(self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return mul(self, reciprocal(other))
        return mul(self, 1.0 / other)

    def __rtruediv__(self, other):
        return mul(_as_tensor(other, self.dtype), reciprocal(self))

    def __pow__(self, exponent):
        return power(self, exponent)

    def sum(self, axis=None):
        return tsum(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def backward(self, grad=None):
        backward(self, grad)


def _as_tensor(x, dtype=np.float64):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _node(data, parents, backward_fn):
    """Wrap an op result; record the graph edge when any parent needs grads."""
    if not np.all(np.isfinite(data)):
        raise NumericError("non-finite value produced by a forward op on finite inputs")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out._seq = next(_seq)
    needs = is_grad_enabled() and any(p.requires_grad for p in parents)
    out.requires_grad = needs
    if needs:
        out._parents = tuple(parents)
        out._backward = backward_fn
    else:
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(grad, shape):
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def backward(loss, grad=None):
    """Populate ``.grad`` on every grad-requiring tensor reachable from ``loss``.

    Gradients accumulate: a tensor used by several consumers receives the sum
    of their contributions, and repeated calls add to existing ``.grad``.
    """
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ContractError("loss is not connected to any tensor that requires grad")

    nodes = {}
    stack = [loss]
    while stack:
        t = stack.pop()
        if id(t) in nodes:
            continue
        nodes[id(t)] = t
        for p in t._parents:
            if p.requires_grad and id(p) not in nodes:
                stack.append(p)

    seed = np.ones_like(loss.data) if grad is None else np.asarray(grad, dtype=loss.dtype).reshape(loss.shape)
    pending = {id(loss): seed}
    for t in sorted(nodes.values(), key=lambda n: n._seq, reverse=True):
        g = pending.pop(id(t), None)
        if g is None:
            continue
        t.grad = g if t.grad is None else t.grad + g
        if t._backward is None:
            continue
        for parent, pg in zip(t._parents, t._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            pending[key] = pg if key not in pending else pending[key] + pg


# -- elementwise and reduction primitives ------------------------------------


def add(a, b):
    a = _as_tensor(a)
    b = _as_tensor(b, a.dtype)
    sa, sb = a.shape, b.shape

    def bw(g):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return _node(a.data + b.data, (a, b), bw)


def neg(a):
    return _node(-a.data, (a,), lambda g: (-g,))


def mul(a, b):
    a = _as_tensor(a)
    b = _as_tensor(b, a.dtype)
    sa, sb = a.shape, b.shape

    def bw(g):
        return _unbroadcast(g * b.data, sa), _unbroadcast(g * a.data, sb)

    return _node(a.data * b.data, (a, b), bw)


def reciprocal(a):
    if np.any(a.data == 0):
        raise NumericError("division by zero")
    out = 1.0 / a.data
    return _node(out, (a,), lambda g: (-g * out * out,))


def power(a, exponent):
    exponent = float(exponent)
    out = a.data ** exponent
    return _node(out, (a,), lambda g: (g * exponent * a.data ** (exponent - 1.0),))


def log(a):
    if np.any(a.data <= 0):
        raise NumericError("log of non-positive value")
    return _node(np.log(a.data), (a,), lambda g: (g / a.data,))


def clamp(a, lo=None, hi=None):
    """Clip values; the gradient passes only where the input was strictly inside."""
    out = np.clip(a.data, lo, hi)
    inside = np.ones(a.shape, dtype=bool)
    if lo is not None:
        inside &= a.data > lo
    if hi is not None:
        inside &= a.data < hi
    return _node(out, (a,), lambda g: (g * inside,))


def tsum(a, axis=None):
    shape = a.shape

    def bw(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return _node(np.asarray(a.data.sum(axis=axis)), (a,), bw)


def mean(a, axis=None):
    count = a.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return tsum(a, axis) * (1.0 / count)


def reshape(a, shape):
    old = a.shape
    return _node(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def take(a, index):
    shape = a.shape

    def bw(g):
        full = np.zeros(shape, dtype=g.dtype)
        np.add.at(full, index, g)
        return (full,)

    return _node(np.array(a.data[index]), (a,), bw)


def stack(tensors, axis=0):
    tensors = list(tensors)

    def bw(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return _node(np.stack([t.data for t in tensors], axis=axis), tensors, bw)


# -- network layers ----------------------------------------------------------


def relu(x):
    """max(0, x); the subgradient at exactly 0 is 0."""
    positive = x.data > 0
    return _node(np.where(positive, x.data, 0).astype(x.dtype), (x,), lambda g: (g * positive,))


def sigmoid(x):
    """Numerically stable logistic function, kept strictly inside (0, 1).

    Saturated results are pinned to the nearest representable value inside
    the open interval (e.g. ``sigmoid(40)`` in float64 is ``1 - 2**-53``).
    """
    d = x.data
    z = np.exp(-np.abs(d))
    out = np.where(d >= 0, 1.0 / (1.0 + z), z / (1.0 + z)).astype(d.dtype)
    info = np.finfo(d.dtype)
    out = np.clip(out, info.tiny, 1.0 - info.epsneg)
    return _node(out, (x,), lambda g: (g * out * (1.0 - out),))


def conv2d(x, kernel, bias=None, stride=1, padding=0):
    """2-D cross-correlation of ``x[N,C,H,W]`` with ``kernel[K,C,kh,kw]``."""
    if x.ndim != 4:
        raise DimensionError(f"conv2d input must be 4-D [N,C,H,W], got shape {x.shape}")
    if kernel.ndim != 4:
        raise DimensionError(f"conv2d kernel must be 4-D [K,C,kh,kw], got shape {kernel.shape}")
    n, c, h, w = x.shape
    k, kc, kh, kw = kernel.shape
    if kc != c:
        raise DimensionError(f"conv2d channel axis mismatch: input C={c}, kernel C={kc}")
    if bias is not None and bias.shape != (k,):
        raise DimensionError(f"conv2d bias axis mismatch: expected ({k},), got {bias.shape}")
    if stride < 1 or padding < 0:
        raise ParameterError("stride must be positive and padding non-negative")
    hp, wp = h + 2 * padding, w + 2 * padding
    if kh > hp or kw > wp:
        raise DimensionError(
            f"conv2d kernel ({kh}x{kw}) larger than padded input along H/W ({hp}x{wp})"
        )
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1

    # im2col in NHWC layout: cols[n, y, x, (i, j, c)]
    xn = x.data.transpose(0, 2, 3, 1)
    if padding:
        xn = np.pad(xn, ((0, 0), (padding, padding), (padding, padding), (0, 0)))
    ys = stride * (ho - 1) + 1
    xs = stride * (wo - 1) + 1
    offsets = [(i, j) for i in range(kh) for j in range(kw)]
    cols = np.concatenate([xn[:, i:i + ys:stride, j:j + xs:stride, :] for i, j in offsets], axis=-1)
    wmat = kernel.data.transpose(0, 2, 3, 1).reshape(k, kh * kw * c)
    out = cols @ wmat.T
    if bias is not None:
        out = out + bias.data
    out = np.ascontiguousarray(out.transpose(0, 3, 1, 2))

    parents = (x, kernel) if bias is None else (x, kernel, bias)

    def bw(g):
        gt = np.ascontiguousarray(g.transpose(0, 2, 3, 1))  # [N, Ho, Wo, K]
        gx = gk = None
        if kernel.requires_grad:
            gw = gt.reshape(-1, k).T @ cols.reshape(-1, kh * kw * c)
            gk = np.ascontiguousarray(gw.reshape(k, kh, kw, c).transpose(0, 3, 1, 2))
        if x.requires_grad:
            gcols = gt @ wmat  # [N, Ho, Wo, kh*kw*C]
            gxn = np.zeros((n, hp, wp, c), dtype=g.dtype)
            for idx, (i, j) in enumerate(offsets):
                gxn[:, i:i + ys:stride, j:j + xs:stride, :] += gcols[..., idx * c:(idx + 1) * c]
            if padding:
                gxn = gxn[:, padding:padding + h, padding:padding + w, :]
            gx = np.ascontiguousarray(gxn.transpose(0, 3, 1, 2))
        grads = (gx, gk)
        if bias is not None:
            grads += (gt.sum(axis=(0, 1, 2)) if bias.requires_grad else None,)
        return grads

    return _node(out, parents, bw)


def maxpool2(x):
    """Non-overlapping 2x2 max pooling; ties send the gradient to the first
    element in row-major order."""
    if x.ndim != 4:
        raise DimensionError(f"maxpool2 input must be 4-D, got shape {x.shape}")
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise DimensionError(f"maxpool2 needs even H and W, got H={h}, W={w}")
    d = x.data
    quads = (d[:, :, 0::2, 0::2], d[:, :, 0::2, 1::2], d[:, :, 1::2, 0::2], d[:, :, 1::2, 1::2])
    out = np.maximum(np.maximum(quads[0], quads[1]), np.maximum(quads[2], quads[3]))

    def bw(g):
        gx = np.zeros(x.shape, dtype=g.dtype)
        taken = np.zeros(out.shape, dtype=bool)
        # quads are in row-major order within each window, so the first match wins ties
        for q, (di, dj) in zip(quads, ((0, 0), (0, 1), (1, 0), (1, 1))):
            hit = (q == out) & ~taken
            gx[:, :, di::2, dj::2] = g * hit
            taken |= hit
        return (gx,)

    return _node(out, (x,), bw)


def global_avg_pool(x):
    """Spatial mean of ``x[N,K,H,W]`` giving ``[N,K]``."""
    if x.ndim != 4:
        raise DimensionError(f"global_avg_pool input must be 4-D, got shape {x.shape}")
    n, k, h, w = x.shape
    if h < 1 or w < 1:
        raise DimensionError("global_avg_pool needs H, W >= 1")
    scale = 1.0 / (h * w)

    def bw(g):
        return (np.broadcast_to(g[:, :, None, None] * scale, x.shape).astype(g.dtype),)

    return _node(x.data.mean(axis=(2, 3)), (x,), bw)


def linear(x, weight, bias=None):
    """``x[N,D] @ weight[O,D].T + bias[O]``."""
    if x.ndim != 2 or weight.ndim != 2:
        raise DimensionError(f"linear expects 2-D input and weight, got {x.shape} and {weight.shape}")
    if x.shape[1] != weight.shape[1]:
        raise DimensionError(
            f"linear inner dimension mismatch: input D={x.shape[1]}, weight D={weight.shape[1]}"
        )
    if bias is not None and bias.shape != (weight.shape[0],):
        raise DimensionError(f"linear bias must have shape ({weight.shape[0]},), got {bias.shape}")
    out = x.data @ weight.data.T
    if bias is not None:
        out = out + bias.data
    parents = (x, weight) if bias is None else (x, weight, bias)

    def bw(g):
        grads = (g @ weight.data, g.T @ x.data)
        if bias is not None:
            grads += (g.sum(axis=0),)
        return grads

    return _node(out, parents, bw)


def dropout(x, p, training, rng_seed=0):
    """Inverted dropout. Identity at inference or when ``p == 0``."""
    if not 0.0 <= p < 1.0:
        raise ParameterError(f"dropout probability must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    keep = stream(rng_seed).random(x.shape) >= p
    scale = np.asarray(1.0 / (1.0 - p), dtype=x.dtype)
    factor = keep * scale
    return _node(x.data * factor, (x,), lambda g: (g * factor,))
