"""Define-by-run reverse-mode differentiation over float64 numpy arrays.

Every op returns a new :class:`Tensor` that remembers its parents and a
closure that pushes its output gradient back to them. The graph is rebuilt on
each forward pass; :func:`backward` walks it in reverse topological order.
"""
from __future__ import annotations

import math

import numpy as np

LN_EPS = 1e-5


class ShapeError(ValueError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, _parents=(), op: str = ""):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(())
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = None
        self.op = op

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op or 'leaf'}, requires_grad={self.requires_grad})"

    def backward(self, grad=None):
        backward(self, grad)

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other):
        return add(as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division by a Tensor is not supported")
        return mul(self, 1.0 / other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return index(self, idx)

    @property
    def T(self):
        return swapaxes(self, -1, -2)

    def sum(self, axis=None):
        return sum_(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True)


def _make(data, parents, op, backward_fn) -> Tensor:
    needs = any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=needs, _parents=tuple(parents) if needs else (), op=op)
    if needs:
        out._backward = backward_fn
    return out


def _accumulate(t: Tensor, g: np.ndarray):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64, copy=True)
    else:
        t.grad = t.grad + g


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, s in enumerate(shape):
        if s == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def graph_nodes(root: Tensor) -> list[Tensor]:
    """Nodes reachable from ``root`` in topological order (inputs first)."""
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor, grad=None):
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every ``requires_grad`` tensor.

    ``loss`` must be a scalar unless an explicit upstream ``grad`` of the same
    shape is given.
    """
    if grad is None:
        if loss.data.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        grad = np.ones_like(loss.data)
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != loss.shape:
        raise ShapeError(f"upstream gradient shape {grad.shape} != output shape {loss.shape}")
    if not loss.requires_grad:
        return
    nodes = graph_nodes(loss)
    grads = {id(loss): grad}
    for node in reversed(nodes):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            _accumulate(node, g)
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = grads[key] + pg if key in grads else pg


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data + b.data, (a, b), "add",
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), "neg", lambda g: (-g,))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data * b.data, (a, b), "mul",
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _make(np.where(mask, x.data, 0.0), (x,), "relu", lambda g: (g * mask,))


def sigmoid(x: Tensor) -> Tensor:
    s = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return _make(s, (x,), "sigmoid", lambda g: (g * s * (1.0 - s),))


def tanh(x: Tensor) -> Tensor:
    t = np.tanh(x.data)
    return _make(t, (x,), "tanh", lambda g: (g * (1.0 - t * t),))


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(x: Tensor) -> Tensor:
    """GELU, tanh approximation."""
    v = x.data
    inner = _GELU_C * (v + 0.044715 * v**3)
    t = np.tanh(inner)
    out = 0.5 * v * (1.0 + t)

    def bw(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * v**2)
        return (g * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * dinner),)

    return _make(out, (x,), "gelu", bw)


# ---------------------------------------------------------------- shape / reduction

def reshape(x: Tensor, shape) -> Tensor:
    return _make(x.data.reshape(shape), (x,), "reshape", lambda g: (g.reshape(x.shape),))


def swapaxes(x: Tensor, a: int, b: int) -> Tensor:
    return _make(np.swapaxes(x.data, a, b), (x,), "swapaxes", lambda g: (np.swapaxes(g, a, b),))


def index(x: Tensor, idx) -> Tensor:
    def bw(g):
        full = np.zeros_like(x.data)
        np.add.at(full, idx, g)
        return (full,)

    return _make(x.data[idx], (x,), "index", bw)


def stack(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = np.stack([t.data for t in tensors], axis=axis)

    def bw(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return _make(out, tensors, "stack", bw)


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    cuts = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def bw(g):
        return tuple(np.split(g, cuts, axis=axis))

    return _make(out, tensors, "concat", bw)


def sum_(x: Tensor, axis=None) -> Tensor:
    out = x.data.sum(axis=axis)

    def bw(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape),)

    return _make(out, (x,), "sum", bw)


def mean(x: Tensor, axis=None) -> Tensor:
    out = x.data.mean(axis=axis)
    count = x.data.size / max(out.size, 1)

    def bw(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, x.shape),)

    return _make(out, (x,), "mean", bw)


def mean_pool(x: Tensor, axes=(-3, -2)) -> Tensor:
    """Global average over the given axes (spatial by default)."""
    return mean(x, axis=tuple(axes))


def avg_pool2d(x: Tensor, size: int) -> Tensor:
    """Non-overlapping ``size x size`` average pooling of ``(N, H, W, C)`` maps."""
    n, h, w, c = x.shape
    if h % size or w % size:
        raise ShapeError(f"pool size {size} does not divide {h}x{w}")
    return mean(reshape(x, (n, h // size, size, w // size, size, c)), axis=(2, 4))


# ---------------------------------------------------------------- linear algebra

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape[-1] != b.shape[0 if b.ndim == 1 else -2]:
        raise ShapeError(f"matmul shape mismatch {a.shape} @ {b.shape}")
    out = a.data @ b.data

    def bw(g):
        ad, bd = a.data, b.data
        if bd.ndim == 1:
            ga = np.multiply.outer(g, bd)
            gb = np.tensordot(ad, g, axes=(tuple(range(ad.ndim - 1)), tuple(range(g.ndim))))
            return _unbroadcast(ga, a.shape), gb
        ga = g @ np.swapaxes(bd, -1, -2)
        if ad.ndim == 1:
            gb = np.multiply.outer(ad, g) if g.ndim == 1 else ad[:, None] * g
        else:
            gb = np.swapaxes(ad, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make(out, (a, b), "matmul", bw)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    y = matmul(x, weight)
    return y if bias is None else add(y, bias)


# ---------------------------------------------------------------- normalisation / probabilities

def softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (s * (g - np.sum(g * s, axis=axis, keepdims=True)),)

    return _make(s, (x,), "softmax", bw)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    s = np.exp(out)

    def bw(g):
        return (g - s * np.sum(g, axis=axis, keepdims=True),)

    return _make(out, (x,), "log_softmax", bw)


def cross_entropy_with_logits(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` over all leading positions."""
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != logits.shape[:-1]:
        raise ShapeError(f"labels shape {labels.shape} does not match logits {logits.shape}")
    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    logp = z - lse
    picked = np.take_along_axis(logp, labels[..., None], axis=-1)[..., 0]
    count = max(labels.size, 1)
    loss = -picked.sum() / count

    def bw(g):
        p = np.exp(logp)
        np.put_along_axis(p, labels[..., None], np.take_along_axis(p, labels[..., None], -1) - 1.0, -1)
        return (g * p / count,)

    return _make(loss, (logits,), "cross_entropy", bw)


def layernorm(x: Tensor, scale: Tensor | None = None, shift: Tensor | None = None,
              eps: float = LN_EPS) -> Tensor:
    """Normalise the last axis to zero mean and unit variance, then scale and shift."""
    if x.shape[-1] < 1:
        raise ShapeError("layernorm needs a non-empty feature axis")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = np.mean(xc * xc, axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv

    def bw(g):
        gx = inv * (g - g.mean(axis=-1, keepdims=True) - xhat * np.mean(g * xhat, axis=-1, keepdims=True))
        return (gx,)

    out = _make(xhat, (x,), "layernorm", bw)
    if scale is not None:
        out = mul(out, scale)
    if shift is not None:
        out = add(out, shift)
    return out


# ---------------------------------------------------------------- convolution

PADDINGS = ("zero", "circular")


def _pad_index(n: int, p: int, padding: str):
    idx = np.arange(-p, n + p)
    if padding == "circular":
        return idx % n, None
    valid = (idx >= 0) & (idx < n)
    return np.clip(idx, 0, n - 1), valid


def _pad_axis(x: np.ndarray, axis: int, p: int, padding: str) -> np.ndarray:
    if p == 0:
        return x
    if padding == "zero":
        widths = [(0, 0)] * x.ndim
        widths[axis] = (p, p)
        return np.pad(x, widths)
    return np.pad(x, [(p, p) if a == axis else (0, 0) for a in range(x.ndim)], mode="wrap")


def _unpad_axis(g: np.ndarray, axis: int, n: int, p: int, padding: str) -> np.ndarray:
    if p == 0:
        return g
    if padding == "zero":
        return np.take(g, np.arange(p, p + n), axis=axis)
    src, _ = _pad_index(n, p, padding)
    out = np.zeros(g.shape[:axis] + (n,) + g.shape[axis + 1:])
    moved = np.moveaxis(out, axis, 0)
    np.add.at(moved, src, np.moveaxis(g, axis, 0))
    return out


def _conv_nd(x: Tensor, kernel, padding: str, spatial: int, op: str) -> Tensor:
    if padding not in PADDINGS:
        raise ValueError(f"padding must be one of {PADDINGS}")
    kern = kernel if isinstance(kernel, Tensor) else Tensor(getattr(kernel, "data", kernel))
    kd = kern.data
    if kd.ndim != spatial + 2:
        raise ShapeError(f"{op} expects a rank-{spatial + 2} kernel, got {kd.shape}")
    squeeze = x.ndim == spatial + 1
    xd = x.data[None] if squeeze else x.data
    if xd.ndim != spatial + 2:
        raise ShapeError(f"{op} expects input of rank {spatial + 1} or {spatial + 2}, got {x.shape}")
    if xd.shape[-1] != kd.shape[-2]:
        raise ShapeError(f"channel mismatch: input has {xd.shape[-1]}, kernel expects {kd.shape[-2]}")
    k = kd.shape[0]
    if k % 2 == 0 or any(s != k for s in kd.shape[:spatial]):
        raise ShapeError("kernel taps must be square and odd for SAME convolution")
    p = k // 2
    sizes = xd.shape[1:1 + spatial]
    xp = xd
    for ax in range(spatial):
        xp = _pad_axis(xp, 1 + ax, p, padding)
    taps = list(np.ndindex(*kd.shape[:spatial]))

    def window(arr, tap):
        sl = (slice(None),) + tuple(slice(t, t + s) for t, s in zip(tap, sizes))
        return arr[sl]

    c_out = kd.shape[-1]
    out = np.zeros(xd.shape[:-1] + (c_out,))
    for tap in taps:
        out += window(xp, tap) @ kd[tap]
    if squeeze:
        out = out[0]

    def bw(g):
        g = g[None] if squeeze else g
        gx = gk = None
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            for tap in taps:
                window(gxp, tap)[...] += g @ kd[tap].T
            for ax in range(spatial):
                gxp = _unpad_axis(gxp, 1 + ax, sizes[ax], p, padding)
            gx = gxp[0] if squeeze else gxp
        if kern.requires_grad:
            gk = np.zeros_like(kd)
            c_in = kd.shape[-2]
            g2 = g.reshape(-1, c_out)
            for tap in taps:
                gk[tap] = window(xp, tap).reshape(-1, c_in).T @ g2
        return gx, gk

    return _make(out, (x, kern), op, bw)


def conv2d(x: Tensor, kernel, padding: str = "zero") -> Tensor:
    """Stride-1 SAME cross-correlation of ``(N,)H,W,C_in`` maps with a ``(k,k,C_in,C_out)`` kernel.

    ``kernel`` may be a trainable :class:`Tensor` or a constant (``ConvKernel``
    or array), in which case no gradient flows into it.
    """
    return _conv_nd(x, kernel, padding, 2, "conv2d")


def conv1d(x: Tensor, kernel, padding: str = "zero") -> Tensor:
    """Stride-1 SAME cross-correlation of ``(N,)L,C_in`` sequences with a ``(k,C_in,C_out)`` kernel."""
    return _conv_nd(x, kernel, padding, 1, "conv1d")


# ---------------------------------------------------------------- attention

def attention(x: Tensor, wq: Tensor, wk: Tensor, wv: Tensor, wo: Tensor,
              return_weights: bool = False):
    """Single-head scaled dot-product self-attention on ``(N,)L,D`` inputs."""
    d = x.shape[-1]
    for w in (wq, wk, wv, wo):
        if w.shape != (d, d):
            raise ShapeError(f"projection of shape {w.shape} does not match model width {d}")
    q, k, v = matmul(x, wq), matmul(x, wk), matmul(x, wv)
    scores = mul(matmul(q, swapaxes(k, -1, -2)), 1.0 / math.sqrt(d))
    weights = softmax(scores, axis=-1)
    out = matmul(matmul(weights, v), wo)
    return (out, weights) if return_weights else out
