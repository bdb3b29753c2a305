"""Reverse-mode autodiff over numpy arrays.

This is the entire differentiable substrate for the package: a Tensor
wrapping a C-contiguous float32/float64 ndarray plus the minimal op set
the models need. Ops are pure functions of immutable inputs; gradients
accumulate into ``Tensor.grad`` during ``backward``. All reductions use
numpy's fixed evaluation order, so identical inputs give bit-identical
outputs on a given platform.

Masks, token ids, and pixel buffers enter the graph as constants
(``requires_grad=False``); only model parameters carry gradients.
"""

from __future__ import annotations

import functools
from typing import Iterable, Sequence

import numpy as np

from ..errors import ShapeError

Array = np.ndarray

_ALLOWED_DTYPES = (np.float32, np.float64)


def _as_array(value, dtype=None) -> Array:
    arr = np.asarray(value, dtype=dtype)
    if arr.dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
        arr = arr.astype(np.float32)
    # ascontiguousarray would promote 0-d scalars to shape (1,)
    return arr if arr.ndim == 0 else np.ascontiguousarray(arr)


class Tensor:
    """Dense n-d array node in the autodiff graph."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data: Array = _as_array(data, dtype)
        self.requires_grad = bool(requires_grad)
        self.grad: Array | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    # -- basic introspection -------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}, grad={self.requires_grad})"

    # -- graph plumbing -------------------------------------------------------

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: Array) -> None:
        if self.grad is None:
            if g.dtype == self.data.dtype:
                # copy: g may alias another node's buffer or be a view
                self.grad = np.array(g)
            else:
                self.grad = g.astype(self.data.dtype)
        else:
            self.grad += g

    def _accumulate_owned(self, g: Array) -> None:
        """Like _accumulate for arrays the caller just allocated and will drop."""
        if self.grad is None:
            if g.dtype == self.data.dtype:
                self.grad = g
            else:
                self.grad = g.astype(self.data.dtype)
        else:
            self.grad += g

    def backward(self, seed: Array | None = None) -> None:
        """Backpropagate from this node. Scalar roots seed with 1."""
        if seed is None:
            if self.data.size != 1:
                raise ShapeError("backward() without seed requires a scalar root")
            seed = np.ones_like(self.data)
        order = _topo_order(self)
        self._accumulate(np.asarray(seed, dtype=self.data.dtype))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- operator sugar -------------------------------------------------------

    def __add__(self, other):
        return add(self, _coerce(other, self))

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, mul_scalar(_coerce(other, self), -1.0))

    def __rsub__(self, other):
        return add(_coerce(other, self), mul_scalar(self, -1.0))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return mul_scalar(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return mul_scalar(self, 1.0 / float(other))
        return mul(self, power(other, -1.0))

    def __neg__(self):
        return mul_scalar(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return index(self, key)


def _coerce(value, like: Tensor) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=like.data.dtype))


def constant(value, dtype=np.float32) -> Tensor:
    return Tensor(np.asarray(value, dtype=dtype))


def parameter(value, dtype=None) -> Tensor:
    return Tensor(value, requires_grad=True, dtype=dtype)


def _topo_order(root: Tensor) -> list[Tensor]:
    # Iterative DFS; graphs for long decoder contexts overflow recursion.
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
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def _needs_grad(*tensors: Tensor) -> bool:
    return any(t.requires_grad or t._parents for t in tensors)


def _make(data: Array, parents: tuple[Tensor, ...], backward) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.requires_grad = False
    if any(p.requires_grad or p._parents for p in parents):
        out._parents = parents
        out._backward = backward
    else:
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(grad: Array, shape: tuple[int, ...]) -> Array:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# -- elementwise ---------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    data = a.data + b.data

    def backward(g: Array) -> None:
        ra = _unbroadcast(g, a.shape)
        (a._accumulate if ra is g else a._accumulate_owned)(ra)
        rb = _unbroadcast(g, b.shape)
        (b._accumulate if rb is g else b._accumulate_owned)(rb)

    return _make(data, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    data = a.data * b.data

    def backward(g: Array) -> None:
        a._accumulate_owned(_unbroadcast(g * b.data, a.shape))
        b._accumulate_owned(_unbroadcast(g * a.data, b.shape))

    return _make(data, (a, b), backward)


def mul_scalar(a: Tensor, s: float) -> Tensor:
    data = a.data * a.data.dtype.type(s)

    def backward(g: Array) -> None:
        a._accumulate_owned(g * a.data.dtype.type(s))

    return _make(data, (a,), backward)


def power(a: Tensor, exponent: float) -> Tensor:
    data = a.data**exponent

    def backward(g: Array) -> None:
        a._accumulate_owned(g * exponent * a.data ** (exponent - 1.0))

    return _make(data, (a,), backward)


def exp(a: Tensor) -> Tensor:
    data = np.exp(a.data)

    def backward(g: Array) -> None:
        a._accumulate_owned(g * data)

    return _make(data, (a,), backward)


def log(a: Tensor) -> Tensor:
    data = np.log(a.data)

    def backward(g: Array) -> None:
        a._accumulate_owned(g / a.data)

    return _make(data, (a,), backward)


def tanh(a: Tensor) -> Tensor:
    data = np.tanh(a.data)

    def backward(g: Array) -> None:
        a._accumulate_owned(g * (1.0 - data * data))

    return _make(data, (a,), backward)


_GELU_C = 0.7978845608028654  # sqrt(2/pi)
_GELU_D = _GELU_C * 3.0 * 0.044715


def gelu(a: Tensor) -> Tensor:
    """Tanh-approximation GELU, the standard transformer MLP nonlinearity."""
    x = a.data
    x2 = x * x
    inner = x2 * x
    inner *= 0.044715
    inner += x
    inner *= _GELU_C
    t = np.tanh(inner)
    half_1pt = t + 1.0
    half_1pt *= 0.5
    data = x * half_1pt

    def backward(g: Array) -> None:
        dinner = x2 * _GELU_D
        dinner += _GELU_C
        da = t * t
        np.subtract(1.0, da, out=da)
        da *= dinner
        da *= x
        da *= 0.5
        da += half_1pt
        da *= g
        a._accumulate_owned(da)

    return _make(data, (a,), backward)


def clip(a: Tensor, lo: float | None, hi: float | None) -> Tensor:
    """Clamp with pass-through gradient strictly inside the range."""
    data = np.clip(a.data, lo, hi)
    inside = np.ones_like(a.data)
    if lo is not None:
        inside = inside * (a.data > lo)
    if hi is not None:
        inside = inside * (a.data < hi)

    def backward(g: Array) -> None:
        a._accumulate_owned(g * inside)

    return _make(data, (a,), backward)


# -- linear algebra ------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape[-1] != b.data.shape[-2 if b.data.ndim > 1 else 0]:
        raise ShapeError(
            f"matmul inner dimensions differ: {a.data.shape} x {b.data.shape}"
        )
    data = np.matmul(a.data, b.data)

    def backward(g: Array) -> None:
        if b.data.ndim == 1:
            a._accumulate_owned(_unbroadcast(np.outer(g, b.data).reshape(a.shape), a.shape))
            b._accumulate_owned(_unbroadcast(np.matmul(a.data.swapaxes(-1, -2), g), b.shape))
            return
        ga = np.matmul(g, b.data.swapaxes(-1, -2))
        gb = np.matmul(a.data.swapaxes(-1, -2), g)
        a._accumulate_owned(_unbroadcast(ga, a.shape))
        b._accumulate_owned(_unbroadcast(gb, b.shape))

    return _make(data, (a, b), backward)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    data = a.data.reshape(shape)

    def backward(g: Array) -> None:
        a._accumulate(g.reshape(a.shape))

    return _make(data, (a,), backward)


def transpose(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    data = np.ascontiguousarray(a.data.transpose(axes))
    inverse = tuple(np.argsort(axes))

    def backward(g: Array) -> None:
        a._accumulate(g.transpose(inverse))

    return _make(data, (a,), backward)


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g: Array) -> None:
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            t._accumulate(g[tuple(sl)])

    return _make(data, tuple(tensors), backward)


def index(a: Tensor, key) -> Tensor:
    """Basic slicing/int indexing; gradient scatters into zeros."""
    data = np.ascontiguousarray(a.data[key])

    def backward(g: Array) -> None:
        full = np.zeros_like(a.data)
        full[key] = g.reshape(full[key].shape)
        a._accumulate_owned(full)

    return _make(data, (a,), backward)


def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g: Array) -> None:
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        gb = np.broadcast_to(g, a.shape)
        if gb.dtype != a.data.dtype:
            gb = gb.astype(a.data.dtype)
        a._accumulate(gb)

    return _make(np.asarray(data), (a,), backward)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = a.data.size
    elif isinstance(axis, int):
        count = a.data.shape[axis]
    else:
        count = int(np.prod([a.data.shape[ax] for ax in axis]))
    return mul_scalar(sum_(a, axis=axis, keepdims=keepdims), 1.0 / count)


# -- fused model ops -----------------------------------------------------------


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    data = a.data - a.data.max(axis=axis, keepdims=True)
    np.exp(data, out=data)
    data /= data.sum(axis=axis, keepdims=True)

    def backward(g: Array) -> None:
        dot = (g * data).sum(axis=axis, keepdims=True)
        a._accumulate_owned(data * (g - dot))

    return _make(data, (a,), backward)


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    data = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(data).sum(axis=axis, keepdims=True))
    data -= lse

    def backward(g: Array) -> None:
        a._accumulate_owned(g - np.exp(data) * g.sum(axis=axis, keepdims=True))

    return _make(data, (a,), backward)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    if x.data.shape[-1] != gamma.data.shape[-1] or x.data.shape[-1] != beta.data.shape[-1]:
        raise ShapeError(
            f"layer_norm feature dim {x.data.shape[-1]} does not match "
            f"gamma {gamma.data.shape} / beta {beta.data.shape}"
        )
    if eps <= 0:
        raise ShapeError("layer_norm eps must be positive")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    data = xhat * gamma.data + beta.data

    def backward(g: Array) -> None:
        d = x.data.shape[-1]
        gxhat = g * gamma.data
        gamma._accumulate_owned(_unbroadcast(g * xhat, gamma.shape))
        rb = _unbroadcast(g, beta.shape)
        (beta._accumulate if rb is g else beta._accumulate_owned)(rb)
        # standard fused layernorm backward
        gx = (
            gxhat
            - gxhat.mean(axis=-1, keepdims=True)
            - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True)
        ) * inv
        if gx.dtype != x.data.dtype:
            gx = gx.astype(x.data.dtype)
        x._accumulate_owned(gx)

    if data.dtype != x.data.dtype:
        data = data.astype(x.data.dtype)
    return _make(data, (x, gamma, beta), backward)


def l2_normalize(x: Tensor, axis: int = -1, eps: float = 1e-12) -> Tensor:
    norm = np.sqrt((x.data * x.data).sum(axis=axis, keepdims=True) + eps)
    data = x.data / norm

    def backward(g: Array) -> None:
        dot = (g * data).sum(axis=axis, keepdims=True)
        x._accumulate_owned((g - data * dot) / norm)

    return _make(data, (x,), backward)


def embedding(table: Tensor, ids: Array) -> Tensor:
    """Row lookup into ``table``; ids is an integer ndarray constant."""
    ids = np.asarray(ids)
    data = np.ascontiguousarray(table.data[ids])

    def backward(g: Array) -> None:
        full = np.zeros_like(table.data)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, table.data.shape[-1]))
        table._accumulate_owned(full)

    return _make(data, (table,), backward)


def take_along_last(a: Tensor, idx: Array) -> Tensor:
    """Pick one entry along the last axis per leading position."""
    idx = np.asarray(idx)
    expanded = idx[..., None]
    data = np.take_along_axis(a.data, expanded, axis=-1)[..., 0]

    def backward(g: Array) -> None:
        full = np.zeros_like(a.data)
        np.put_along_axis(full, expanded, g[..., None], axis=-1)
        a._accumulate_owned(full)

    return _make(np.ascontiguousarray(data), (a,), backward)


def attention(q: Tensor, k: Tensor, v: Tensor, causal: bool = False) -> Tensor:
    """Scaled dot-product attention over the last two axes.

    Accepts any matching leading (batch/head) dims: q (..., n, d),
    k/v (..., m, d). ``causal`` masks strictly-future key positions and
    is only meaningful for self-attention (n == m).
    """
    if q.data.shape[-1] != k.data.shape[-1]:
        raise ShapeError(
            f"attention head dims differ: q {q.data.shape} vs k {k.data.shape}"
        )
    if k.data.shape[-2] != v.data.shape[-2]:
        raise ShapeError(
            f"attention k/v lengths differ: {k.data.shape} vs {v.data.shape}"
        )
    d = q.data.shape[-1]
    scale = 1.0 / np.sqrt(d)
    scores = matmul(mul_scalar(q, scale), transpose_last(k))
    if causal:
        n, m = q.data.shape[-2], k.data.shape[-2]
        if n != m:
            raise ShapeError("causal attention requires square score matrix")
        scores = add(scores, Tensor(_causal_mask(n, q.data.dtype.name)))
    return matmul(softmax(scores, axis=-1), v)


@functools.lru_cache(maxsize=32)
def _causal_mask(n: int, dtype: str) -> Array:
    mask = np.triu(np.full((n, n), -1e9, dtype=dtype), k=1)
    mask.flags.writeable = False
    return mask


def transpose_last(a: Tensor) -> Tensor:
    axes = list(range(a.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(a, axes)


def assert_all_finite(t: Tensor, what: str = "tensor") -> Tensor:
    from ..errors import NumericError

    if not np.all(np.isfinite(t.data)):
        raise NumericError(f"non-finite values in {what}")
    return t


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None
