"""Reverse-mode automatic differentiation over numpy arrays.

Everything is float64.  A :class:`Tensor` wraps an ndarray and remembers how it
was produced; calling :meth:`Tensor.backward` on a scalar walks the graph in
reverse topological order and accumulates gradients into every tensor created
with ``requires_grad=True``.

The op set is deliberately small: elementwise arithmetic, matmul, valid
cross-correlation (stride 1 or 2), padding, cropping, nearest upsampling,
softmax and reductions.  Spatial layout is channels-last, ``(N, H, W, C)`` or
``(H, W, C)``.
"""

from __future__ import annotations

import contextlib

import numpy as np

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable graph construction inside the block (inference / evaluation)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def _unbroadcast(grad, shape):
    """Sum `grad` down to `shape` (reverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None

    # -- construction helpers -------------------------------------------------

    @staticmethod
    def _make(data, parents, backward):
        out = Tensor(data)
        if _GRAD_ENABLED and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = parents
            out._backward = backward
        return out

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

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # -- backward pass --------------------------------------------------------

    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a gradient requires a scalar tensor")
            grad = np.ones_like(self.data)
        else:
            grad = np.asarray(grad, dtype=np.float64)

        # iterative topological order (graphs can be deep when loops unroll)
        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if id(node) in seen:
                continue
            if expanded:
                seen.add(id(node))
                order.append(node)
            else:
                stack.append((node, True))
                for p in node._parents:
                    if id(p) not in seen and p.requires_grad:
                        stack.append((p, False))

        self.grad = grad if self.grad is None else self.grad + grad
        for node in reversed(order):
            if node._backward is None or node.grad is None:
                continue
            for parent, pgrad in zip(node._parents, node._backward(node.grad)):
                if not parent.requires_grad or pgrad is None:
                    continue
                if parent.grad is None:
                    parent.grad = pgrad
                else:
                    parent.grad = parent.grad + pgrad

    # -- elementwise arithmetic ----------------------------------------------

    def __add__(self, other):
        other = as_tensor(other)
        a, b = self, other
        out = Tensor._make(
            a.data + b.data,
            (a, b),
            lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)),
        )
        return out

    __radd__ = __add__

    def __neg__(self):
        return Tensor._make(-self.data, (self,), lambda g: (-g,))

    def __sub__(self, other):
        return self + (-as_tensor(other))

    def __rsub__(self, other):
        return as_tensor(other) + (-self)

    def __mul__(self, other):
        other = as_tensor(other)
        a, b = self, other
        return Tensor._make(
            a.data * b.data,
            (a, b),
            lambda g: (
                _unbroadcast(g * b.data, a.data.shape),
                _unbroadcast(g * a.data, b.data.shape),
            ),
        )

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = as_tensor(other)
        a, b = self, other
        return Tensor._make(
            a.data / b.data,
            (a, b),
            lambda g: (
                _unbroadcast(g / b.data, a.data.shape),
                _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape),
            ),
        )

    def __rtruediv__(self, other):
        return as_tensor(other) / self

    def __pow__(self, exponent):
        if not np.isscalar(exponent):
            raise TypeError("only scalar exponents are supported")
        a = self
        return Tensor._make(
            a.data ** exponent,
            (a,),
            lambda g: (g * exponent * a.data ** (exponent - 1),),
        )

    def __matmul__(self, other):
        return matmul(self, as_tensor(other))

    # -- shape ops ------------------------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        a = self
        old = a.data.shape
        return Tensor._make(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))

    def transpose(self, axes):
        a = self
        inv = tuple(np.argsort(axes))
        return Tensor._make(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),))

    def sum(self, axis=None, keepdims=False):
        a = self
        data = a.data.sum(axis=axis, keepdims=keepdims)

        def backward(g):
            if axis is None:
                return (np.broadcast_to(g, a.data.shape).copy(),)
            ax = axis if isinstance(axis, tuple) else (axis,)
            if not keepdims:
                g = np.expand_dims(g, ax)
            return (np.broadcast_to(g, a.data.shape).copy(),)

        return Tensor._make(data, (a,), backward)

    def mean(self, axis=None, keepdims=False):
        if axis is None:
            n = self.data.size
        else:
            ax = axis if isinstance(axis, tuple) else (axis,)
            n = int(np.prod([self.data.shape[i] for i in ax]))
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def constant(x):
    """A non-trainable tensor (no gradient ever flows into it)."""
    return Tensor(x, requires_grad=False)


# -- nonlinearities -----------------------------------------------------------


def exp(x):
    x = as_tensor(x)
    data = np.exp(x.data)
    return Tensor._make(data, (x,), lambda g: (g * data,))


def log(x):
    x = as_tensor(x)
    return Tensor._make(np.log(x.data), (x,), lambda g: (g / x.data,))


def sqrt(x):
    x = as_tensor(x)
    data = np.sqrt(x.data)
    return Tensor._make(data, (x,), lambda g: (g * 0.5 / data,))


def absval(x):
    x = as_tensor(x)
    return Tensor._make(np.abs(x.data), (x,), lambda g: (g * np.sign(x.data),))


def sigmoid(x):
    x = as_tensor(x)
    data = 1.0 / (1.0 + np.exp(-x.data))
    return Tensor._make(data, (x,), lambda g: (g * data * (1.0 - data),))


def tanh(x):
    x = as_tensor(x)
    data = np.tanh(x.data)
    return Tensor._make(data, (x,), lambda g: (g * (1.0 - data * data),))


def leaky_relu(x, slope=0.2):
    x = as_tensor(x)
    factor = np.where(x.data > 0, 1.0, slope)
    return Tensor._make(x.data * factor, (x,), lambda g: (g * factor,))


def maximum(x, value):
    """Elementwise max against a scalar; gradient flows where x > value."""
    x = as_tensor(x)
    mask = (x.data > value).astype(np.float64)
    return Tensor._make(np.maximum(x.data, value), (x,), lambda g: (g * mask,))


def minimum(x, value):
    x = as_tensor(x)
    mask = (x.data < value).astype(np.float64)
    return Tensor._make(np.minimum(x.data, value), (x,), lambda g: (g * mask,))


def clip(x, lo, hi):
    return minimum(maximum(x, lo), hi)


def softmax(x, axis=-1):
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        dot = (g * data).sum(axis=axis, keepdims=True)
        return ((g - dot) * data,)

    return Tensor._make(data, (x,), backward)


# -- linear algebra -----------------------------------------------------------


def matmul(a, b):
    """Matrix product. Supports 2-D @ 2-D, batched @ batched (equal leading
    dims) and batched @ 2-D."""
    a, b = as_tensor(a), as_tensor(b)
    data = np.matmul(a.data, b.data)

    def backward(g):
        bt = np.swapaxes(b.data, -1, -2)
        at = np.swapaxes(a.data, -1, -2)
        da = np.matmul(g, bt)
        db = np.matmul(at, g)
        return (_unbroadcast(da, a.data.shape), _unbroadcast(db, b.data.shape))

    return Tensor._make(data, (a, b), backward)


# -- spatial ops --------------------------------------------------------------


def _with_batch(x):
    """Return (batched_array, had_batch)."""
    if x.ndim == 3:
        return x[None], False
    if x.ndim == 4:
        return x, True
    raise ValueError(f"expected (H,W,C) or (N,H,W,C), got shape {x.shape}")


def conv2d(x, w, stride=1):
    """Valid cross-correlation of ``x`` (N,H,W,Cin or H,W,Cin) with ``w``
    (kh,kw,Cin,Cout).  Pad beforehand for 'same' behaviour."""
    x, w = as_tensor(x), as_tensor(w)
    xd, batched = _with_batch(x.data)
    kh, kw, cin, cout = w.data.shape
    n, h, wid, cx = xd.shape
    if cx != cin:
        raise ValueError(f"input has {cx} channels, kernel expects {cin}")
    if h < kh or wid < kw:
        raise ValueError(f"input {h}x{wid} smaller than kernel {kh}x{kw}")
    s = stride
    ho = (h - kh) // s + 1
    wo = (wid - kw) // s + 1

    out2 = np.zeros((n * ho * wo, cout))
    for a in range(kh):
        for b in range(kw):
            xs = xd[:, a : a + (ho - 1) * s + 1 : s, b : b + (wo - 1) * s + 1 : s, :]
            out2 += xs.reshape(n * ho * wo, cin) @ w.data[a, b]
    out = out2.reshape(n, ho, wo, cout)
    if not batched:
        out = out[0]

    def backward(g):
        g4 = g if g.ndim == 4 else g[None]
        g2 = g4.reshape(n * ho * wo, cout)
        dw = np.zeros_like(w.data)
        dx = np.zeros_like(xd)
        for a in range(kh):
            for b in range(kw):
                sl = np.s_[:, a : a + (ho - 1) * s + 1 : s, b : b + (wo - 1) * s + 1 : s, :]
                xs = xd[sl].reshape(n * ho * wo, cin)
                dw[a, b] = xs.T @ g2
                dx[sl] += (g2 @ w.data[a, b].T).reshape(n, ho, wo, cin)
        return (dx if batched else dx[0], dw)

    return Tensor._make(out, (x, w), backward)


def pad_zero(x, widths):
    """Zero-pad the spatial axes; widths = ((top, bottom), (left, right))."""
    x = as_tensor(x)
    (t, b), (l, r) = widths
    spatial = x.ndim - 3  # index of H axis

    pad_spec = [(0, 0)] * x.ndim
    pad_spec[spatial] = (t, b)
    pad_spec[spatial + 1] = (l, r)
    data = np.pad(x.data, pad_spec)
    h, w = x.data.shape[spatial], x.data.shape[spatial + 1]

    def backward(g):
        sl = [slice(None)] * x.ndim
        sl[spatial] = slice(t, t + h)
        sl[spatial + 1] = slice(l, l + w)
        return (g[tuple(sl)],)

    return Tensor._make(data, (x,), backward)


def pad_reflect(x, p):
    """Reflect-pad (no edge repeat) the spatial axes by p on every side."""
    x = as_tensor(x)
    spatial = x.ndim - 3
    pad_spec = [(0, 0)] * x.ndim
    pad_spec[spatial] = (p, p)
    pad_spec[spatial + 1] = (p, p)
    data = np.pad(x.data, pad_spec, mode="reflect")
    h, w = x.data.shape[spatial], x.data.shape[spatial + 1]

    def fold(g, axis, size):
        core = np.take(g, range(p, p + size), axis=axis).copy()
        for i in range(p):
            # padded index i mirrors source index p - i; tail mirrors size-2-j
            head = np.take(g, [i], axis=axis)
            idx_h = [slice(None)] * g.ndim
            idx_h[axis] = slice(p - i, p - i + 1)
            core[tuple(idx_h)] += head
            tail = np.take(g, [p + size + i], axis=axis)
            idx_t = [slice(None)] * g.ndim
            idx_t[axis] = slice(size - 2 - i, size - 1 - i)
            core[tuple(idx_t)] += tail
        return core

    def backward(g):
        g = fold(g, spatial + 1, w)
        g = fold(g, spatial, h)
        return (g,)

    return Tensor._make(data, (x,), backward)


def crop(x, y0, y1, x0, x1):
    """Slice rows [y0,y1) and columns [x0,x1) of the spatial axes."""
    x = as_tensor(x)
    spatial = x.ndim - 3
    sl = [slice(None)] * x.ndim
    sl[spatial] = slice(y0, y1)
    sl[spatial + 1] = slice(x0, x1)
    sl = tuple(sl)
    h, w = x.data.shape[spatial], x.data.shape[spatial + 1]

    def backward(g):
        dx = np.zeros_like(x.data)
        dx[sl] = g
        return (dx,)

    return Tensor._make(x.data[sl].copy(), (x,), backward)


def place(x, y0, x0, out_h, out_w):
    """Embed ``x`` in a zero canvas of spatial size (out_h, out_w) with its
    top-left corner at (y0, x0)."""
    x = as_tensor(x)
    spatial = x.ndim - 3
    h, w = x.data.shape[spatial], x.data.shape[spatial + 1]
    t, b = y0, out_h - y0 - h
    l, r = x0, out_w - x0 - w
    if b < 0 or r < 0 or t < 0 or l < 0:
        raise ValueError("placement exceeds canvas bounds")
    return pad_zero(x, ((t, b), (l, r)))


def upsample2x(x):
    """Nearest-neighbour 2x upsampling of the spatial axes."""
    x = as_tensor(x)
    xd, batched = _with_batch(x.data)
    n, h, w, c = xd.shape
    data = np.repeat(np.repeat(xd, 2, axis=1), 2, axis=2)

    def backward(g):
        g4 = g if g.ndim == 4 else g[None]
        dg = g4.reshape(n, h, 2, w, 2, c).sum(axis=(2, 4))
        return (dg if batched else dg[0],)

    return Tensor._make(data if batched else data[0], (x,), backward)


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return Tensor._make(data, tuple(tensors), backward)
