"""Dense float64 tensors with reverse-mode automatic differentiation.

Only the primitives the speech/text models actually need are implemented.
Broadcasting is supported for elementwise ops and leading batch axes of
matmul; nothing fancier. Gradients accumulate additively into `.grad` of
every `requires_grad` tensor reachable from the loss.
"""

from __future__ import annotations

import math
from typing import Optional, Sequence

import numpy as np

from .errors import DataError, DimensionError, UsageError

_GRAD_ENABLED = True


class no_grad:
    """Context manager that disables graph recording (inference mode)."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


class Tensor:
    """N-dimensional float64 array, optionally a node in the autodiff graph.

    `_backward(out_grad)` returns one gradient array (or None) per parent.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._parents: tuple = ()
        self._backward = None
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    # Operator sugar; all logic lives in the module-level functions.
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __neg__(self):
        return neg(self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, exponent):
        return pow_(self, exponent)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], (tuple, list)) else shape)

    def swapaxes(self, i, j):
        return swapaxes(self, i, j)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data: np.ndarray, parents: Sequence[Tensor], backward_fn) -> Tensor:
    """Create an op result, recording the graph only when gradients can flow."""
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out = Tensor(data, requires_grad=True)
        out._parents = tuple(parents)
        out._backward = backward_fn
        return out
    return Tensor(data)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce `grad` back to `shape` by summing broadcast axes."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# elementwise ops

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data

    def bwd(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _node(out, (a, b), bwd)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data - b.data

    def bwd(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return _node(out, (a, b), bwd)


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _node(-a.data, (a,), lambda g: (-g,))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data * b.data

    def bwd(g):
        return (_unbroadcast(g * b.data, a.data.shape),
                _unbroadcast(g * a.data, b.data.shape))

    return _node(out, (a, b), bwd)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data

    def bwd(g):
        return (_unbroadcast(g / b.data, a.data.shape),
                _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

    return _node(out, (a, b), bwd)


def pow_(a, exponent: float) -> Tensor:
    a = as_tensor(a)
    p = float(exponent)
    out = a.data ** p

    def bwd(g):
        return (g * p * a.data ** (p - 1.0),)

    return _node(out, (a,), bwd)


def sqrt(a) -> Tensor:
    return pow_(a, 0.5)


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _node(out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    return _node(np.log(a.data), (a,), lambda g: (g / a.data,))


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(a) -> Tensor:
    """Gaussian error linear unit, tanh approximation (smooth everywhere)."""
    a = as_tensor(a)
    x = a.data
    inner = _GELU_C * (x + 0.044715 * x ** 3)
    t = np.tanh(inner)
    out = 0.5 * x * (1.0 + t)

    def bwd(g):
        dt = (1.0 - t * t) * _GELU_C * (1.0 + 3 * 0.044715 * x * x)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * dt),)

    return _node(out, (a,), bwd)


# ---------------------------------------------------------------------------
# shape ops

def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    out = a.data.reshape(shape)
    return _node(out, (a,), lambda g: (g.reshape(a.data.shape),))


def swapaxes(a, i: int, j: int) -> Tensor:
    a = as_tensor(a)
    out = np.swapaxes(a.data, i, j)
    return _node(out, (a,), lambda g: (np.swapaxes(g, i, j),))


def sum_(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        if axis is None:
            return (np.broadcast_to(g, a.data.shape).copy(),)
        gk = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gk, a.data.shape).copy(),)

    return _node(out, (a,), bwd)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    n = a.data.size if axis is None else a.data.shape[axis]
    return mul(sum_(a, axis=axis, keepdims=keepdims), 1.0 / n)


def take_rows(a, idx) -> Tensor:
    """Row gather: out = a[idx]; idx may be any integer array shape."""
    a = as_tensor(a)
    idx = np.asarray(idx, dtype=np.int64)
    out = a.data[idx]

    def bwd(g):
        ga = np.zeros_like(a.data)
        np.add.at(ga, idx, g)
        return (ga,)

    return _node(out, (a,), bwd)


def take_along_last(a, idx) -> Tensor:
    """Gather along the last axis: out[..., j] = a[..., idx[..., j]]."""
    a = as_tensor(a)
    idx = np.asarray(idx, dtype=np.int64)
    out = np.take_along_axis(a.data, idx, axis=-1)

    def bwd(g):
        ga = np.zeros_like(a.data)
        flat_a = ga.reshape(-1, ga.shape[-1])
        flat_idx = np.broadcast_to(idx, g.shape).reshape(-1, g.shape[-1])
        rows = np.arange(flat_a.shape[0])[:, None]
        np.add.at(flat_a, (rows, flat_idx), g.reshape(-1, g.shape[-1]))
        return (ga,)

    return _node(out, (a,), bwd)


def stop_gradient(a) -> Tensor:
    """Detach from the graph; the result never accumulates gradient."""
    a = as_tensor(a)
    return Tensor(a.data)


# ---------------------------------------------------------------------------
# linear algebra

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul requires >=2-D operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner extents differ: {a.shape} x {b.shape}")
    out = np.matmul(a.data, b.data)

    def bwd(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.data.shape), _unbroadcast(gb, b.data.shape)

    return _node(out, (a, b), bwd)


def conv1d(x, w, stride: int = 1, padding: int = 0) -> Tensor:
    """1-D convolution (cross-correlation); x [C,L] or [B,C,L], w [Cout,Cin,K].

    Output length is floor((L + 2*padding - K) / stride) + 1 with zero padding.
    """
    x, w = as_tensor(x), as_tensor(w)
    if stride < 1 or padding < 0:
        raise UsageError(f"conv1d: stride must be >=1 and padding >=0, got {stride}, {padding}")
    if w.ndim != 3:
        raise DimensionError(f"conv1d weight must be 3-D [Cout,Cin,K], got {w.shape}")
    squeeze = x.ndim == 2
    if x.ndim not in (2, 3):
        raise DimensionError(f"conv1d input must be [C,L] or [B,C,L], got {x.shape}")
    xd = x.data[None] if squeeze else x.data
    batch, c_in, length = xd.shape
    c_out, c_in_w, k = w.shape
    if c_in != c_in_w:
        raise DimensionError(f"conv1d channel mismatch: input {x.shape} vs weight {w.shape}")
    if k > length + 2 * padding:
        raise DimensionError(
            f"conv1d window {k} exceeds padded length {length + 2 * padding} (x {x.shape}, w {w.shape})")
    l_out = (length + 2 * padding - k) // stride + 1

    xp = np.pad(xd, ((0, 0), (0, 0), (padding, padding)))
    windows = np.lib.stride_tricks.sliding_window_view(xp, k, axis=-1)[:, :, ::stride, :]
    out = np.einsum("bclk,ock->bol", windows, w.data, optimize=True)
    if squeeze:
        out = out[0]

    def bwd(g):
        gb = g[None] if squeeze else g
        gw = np.einsum("bclk,bol->ock", windows, gb, optimize=True)
        dwin = np.einsum("bol,ock->bclk", gb, w.data, optimize=True)
        gxp = np.zeros_like(xp)
        for off in range(k):
            gxp[:, :, off:off + stride * l_out:stride] += dwin[:, :, :, off]
        gx = gxp[:, :, padding:padding + length]
        if squeeze:
            gx = gx[0]
        return gx, gw

    return _node(out, (x, w), bwd)


# ---------------------------------------------------------------------------
# normalization / attention

def softmax(x, axis: int = -1, mask=None, strict: bool = False) -> Tensor:
    """Numerically stable softmax along `axis`.

    `mask` is boolean, True marks entries excluded before normalization
    (broadcastable to x). Fully masked rows yield zeros unless `strict`,
    in which case they raise DataError.
    """
    x = as_tensor(x)
    xd = x.data
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), xd.shape)
        xd = np.where(mask, -np.inf, xd)
    mx = np.max(xd, axis=axis, keepdims=True)
    mx = np.where(np.isfinite(mx), mx, 0.0)  # rows that are fully masked
    e = np.exp(xd - mx)
    if mask is not None:
        e = np.where(mask, 0.0, e)
    denom = e.sum(axis=axis, keepdims=True)
    dead = denom == 0.0
    if strict and dead.any():
        raise DataError("softmax: fully masked row with strict mode on")
    out = np.divide(e, denom, out=np.zeros_like(e), where=~dead)

    def bwd(g):
        inner = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - inner),)

    return _node(out, (x,), bwd)


def log_softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    mx = np.max(x.data, axis=axis, keepdims=True)
    shifted = x.data - mx
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse

    def bwd(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return _node(out, (x,), bwd)


def layer_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Layer normalization over the last axis with affine parameters."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    n = x.shape[-1]
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = gamma.data * xhat + beta.data

    def bwd(g):
        dxhat = g * gamma.data
        dx = inv * (dxhat
                    - dxhat.mean(axis=-1, keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        axes = tuple(range(g.ndim - 1))
        dgamma = (g * xhat).sum(axis=axes)
        dbeta = g.sum(axis=axes)
        return dx, dgamma, dbeta

    return _node(out, (x, gamma, beta), bwd)


def attention(q, k, v, mask=None, strict: bool = False) -> Tensor:
    """Scaled dot-product attention: softmax(q k^T / sqrt(d)) v.

    q [..,m,d], k/v [..,n,d]; optional boolean mask [..,m,n] with True =
    excluded. A fully masked query row yields a zero output row (lenient).
    """
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    if q.shape[-1] != k.shape[-1]:
        raise DimensionError(f"attention: q/k width mismatch: {q.shape} vs {k.shape}")
    if k.shape[-2] != v.shape[-2]:
        raise DimensionError(f"attention: k/v length mismatch: {k.shape} vs {v.shape}")
    scale = 1.0 / math.sqrt(q.shape[-1])
    scores = mul(matmul(q, swapaxes(k, -1, -2)), scale)
    weights = softmax(scores, axis=-1, mask=mask, strict=strict)
    return matmul(weights, v)


# ---------------------------------------------------------------------------
# backward pass

def _toposort(root: Tensor) -> list:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
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
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/dp into `.grad` of every reachable requires_grad tensor.

    Repeated calls without zeroing add up. Raises UsageError for non-scalar loss.
    """
    if not isinstance(loss, Tensor):
        raise UsageError("backward expects a Tensor loss")
    if loss.data.size != 1:
        raise UsageError(f"backward: loss must be scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    order = _toposort(loss)
    flow: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = flow.pop(id(node), None)
        if g is None:
            continue
        node.grad = g.copy() if node.grad is None else node.grad + g
        if node._backward is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            cur = flow.get(id(parent))
            flow[id(parent)] = pg if cur is None else cur + pg
