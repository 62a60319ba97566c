"""Reverse-mode automatic differentiation over dense float64 arrays.

A Tensor wraps a numpy array plus an optional backward closure; applying a
primitive records the node's parents, so the implicit graph is an explicit
tape once topologically sorted. backward() visits each node exactly once in
reverse order and accumulates leaf gradients additively.

Elementwise/reduction hot spots (softmax, layer norm, gelu) dispatch to the
selected kernel backend; matrix products go straight to numpy BLAS.
"""

import numpy as np

from adstext import kernels
from adstext.errors import NumericsError

_CHECK_FINITE = False


def set_finite_checks(enabled: bool) -> None:
    """Debug mode: validate that every primitive output is finite."""
    global _CHECK_FINITE
    _CHECK_FINITE = bool(enabled)


class Tensor:
    """A float64 array with an optional gradient and backward rule."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}{tag})"

    # Thin operator sugar over the primitive functions.
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __sub__(self, other):
        return add(self, neg(_as_tensor(other)))

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, _as_tensor(other))


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward):
    out = Tensor(data)
    if _CHECK_FINITE and not np.all(np.isfinite(out.data)):
        raise NumericsError("non-finite value produced by a primitive")
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64, copy=True)
    else:
        t.grad += g


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum a gradient down to `shape` after numpy broadcasting."""
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def backward(root: Tensor) -> None:
    """Propagate d(root)/d(leaf) into .grad of every reachable leaf."""
    if root.data.shape != ():
        raise NumericsError(f"backward requires a scalar root, got shape {root.data.shape}")
    order = []
    seen = set()
    stack = [(root, False)]
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
    root.grad = np.asarray(1.0)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


# ---------------------------------------------------------------------------
# primitives


def add(a: Tensor, b: Tensor) -> Tensor:
    data = a.data + b.data

    def bwd(g):
        _accumulate(a, _unbroadcast(g, a.data.shape))
        _accumulate(b, _unbroadcast(g, b.data.shape))

    return _make(data, (a, b), bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    data = a.data * b.data

    def bwd(g):
        _accumulate(a, _unbroadcast(g * b.data, a.data.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.data.shape))

    return _make(data, (a, b), bwd)


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: _accumulate(a, -g))


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _make(a.data * c, (a,), lambda g: _accumulate(a, g * c))


def powc(a: Tensor, p: float) -> Tensor:
    p = float(p)
    data = a.data**p

    def bwd(g):
        _accumulate(a, g * p * a.data ** (p - 1.0))

    return _make(data, (a,), bwd)


def div(a: Tensor, b: Tensor) -> Tensor:
    return mul(a, powc(b, -1.0))


def exp(a: Tensor) -> Tensor:
    data = np.exp(a.data)
    return _make(data, (a,), lambda g: _accumulate(a, g * data))


def absval(a: Tensor) -> Tensor:
    # subgradient 0 at the kink
    return _make(np.abs(a.data), (a,), lambda g: _accumulate(a, g * np.sign(a.data)))


def log(a: Tensor) -> Tensor:
    return _make(np.log(a.data), (a,), lambda g: _accumulate(a, g / a.data))


def tanh(a: Tensor) -> Tensor:
    data = np.tanh(a.data)
    return _make(data, (a,), lambda g: _accumulate(a, g * (1.0 - data**2)))


def gelu(a: Tensor) -> Tensor:
    data = kernels.gelu(a.data)
    return _make(data, (a,), lambda g: _accumulate(a, kernels.gelu_backward(a.data, g)))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """2-D or identically-batched 3-D matrix product."""
    if a.data.ndim != b.data.ndim or a.data.ndim not in (2, 3):
        raise NumericsError(
            f"matmul expects equal-rank 2-D or 3-D operands, got {a.data.shape} @ {b.data.shape}"
        )
    if a.data.shape[-1] != b.data.shape[-2] or a.data.shape[:-2] != b.data.shape[:-2]:
        raise NumericsError(f"matmul shape mismatch: {a.data.shape} @ {b.data.shape}")
    data = a.data @ b.data

    def bwd(g):
        _accumulate(a, g @ b.data.swapaxes(-1, -2))
        _accumulate(b, a.data.swapaxes(-1, -2) @ g)

    return _make(data, (a, b), bwd)


def permute(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))

    def bwd(g):
        _accumulate(a, np.transpose(g, inverse))

    return _make(np.transpose(a.data, axes), (a,), bwd)


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    orig = a.data.shape

    def bwd(g):
        _accumulate(a, g.reshape(orig))

    return _make(a.data.reshape(shape), (a,), bwd)


def sum_(a: Tensor, axis=None, keepdims=False) -> Tensor:
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        if axis is None:
            _accumulate(a, np.broadcast_to(g, a.data.shape))
        else:
            gg = g if keepdims else np.expand_dims(g, axis)
            _accumulate(a, np.broadcast_to(gg, a.data.shape))

    return _make(data, (a,), bwd)


def mean(a: Tensor) -> Tensor:
    return scale(sum_(a), 1.0 / a.data.size)


def max_reduce(a: Tensor, axis: int) -> Tensor:
    """Elementwise maximum along one axis; gradient flows to the first argmax."""
    data = a.data.max(axis=axis)
    idx = a.data.argmax(axis=axis)

    def bwd(g):
        ga = np.zeros_like(a.data)
        grid = np.indices(data.shape)
        index = list(grid)
        index.insert(axis if axis >= 0 else a.data.ndim + axis, idx)
        ga[tuple(index)] = g
        _accumulate(a, ga)

    return _make(data, (a,), bwd)


def row_softmax(a: Tensor) -> Tensor:
    """Softmax over the last axis."""
    rows = a.data.reshape(-1, a.data.shape[-1])
    y = kernels.softmax_rows(np.ascontiguousarray(rows)).reshape(a.data.shape)

    def bwd(g):
        y2 = y.reshape(rows.shape)
        g2 = np.ascontiguousarray(g.reshape(rows.shape))
        _accumulate(a, kernels.softmax_rows_backward(y2, g2).reshape(a.data.shape))

    return _make(y, (a,), bwd)


def log_softmax(a: Tensor) -> Tensor:
    """Log-softmax over the last axis, numerically stabilized."""
    rows = a.data.reshape(-1, a.data.shape[-1])
    y = kernels.log_softmax_rows(np.ascontiguousarray(rows)).reshape(a.data.shape)

    def bwd(g):
        y2 = y.reshape(rows.shape)
        g2 = np.ascontiguousarray(g.reshape(rows.shape))
        _accumulate(a, kernels.log_softmax_rows_backward(y2, g2).reshape(a.data.shape))

    return _make(y, (a,), bwd)


def layer_norm(a: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    cols = a.data.shape[-1]
    rows = np.ascontiguousarray(a.data.reshape(-1, cols))
    out, xhat, inv_std = kernels.layernorm_rows(rows, gamma.data, beta.data, eps)

    def bwd(g):
        g2 = np.ascontiguousarray(g.reshape(-1, cols))
        dx, dgamma, dbeta = kernels.layernorm_rows_backward(g2, xhat, inv_std, gamma.data)
        _accumulate(a, dx.reshape(a.data.shape))
        _accumulate(gamma, dgamma)
        _accumulate(beta, dbeta)

    return _make(out.reshape(a.data.shape), (a, gamma, beta), bwd)


def masked_fill(a: Tensor, mask: np.ndarray, value: float) -> Tensor:
    """Replace entries where mask is True; gradient is blocked there."""
    data = np.where(mask, value, a.data)

    def bwd(g):
        _accumulate(a, _unbroadcast(np.where(mask, 0.0, g), a.data.shape))

    return _make(data, (a,), bwd)


def gather_rows(table: Tensor, ids) -> Tensor:
    """Row lookup (embedding); scatter-add on the way back."""
    ids_arr = np.asarray(ids, dtype=np.intp)
    data = table.data[ids_arr]

    def bwd(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids_arr, g)
        _accumulate(table, gt)

    return _make(data, (table,), bwd)


def select_row(a: Tensor, index: int) -> Tensor:
    data = a.data[index]

    def bwd(g):
        ga = np.zeros_like(a.data)
        ga[index] = g
        _accumulate(a, ga)

    return _make(data, (a,), bwd)


def select_columns(a: Tensor, cols) -> Tensor:
    """out[i] = a[i, cols[i]] for a 2-D tensor."""
    cols_arr = np.asarray(cols, dtype=np.intp)
    rows_arr = np.arange(a.data.shape[0])
    data = a.data[rows_arr, cols_arr]

    def bwd(g):
        ga = np.zeros_like(a.data)
        np.add.at(ga, (rows_arr, cols_arr), g)
        _accumulate(a, ga)

    return _make(data, (a,), bwd)


def stack_rows(tensors) -> Tensor:
    """Stack equal-shape 1-D tensors into a 2-D tensor."""
    tensors = list(tensors)
    data = np.stack([t.data for t in tensors])

    def bwd(g):
        for i, t in enumerate(tensors):
            _accumulate(t, g[i])

    return _make(data, tuple(tensors), bwd)


def dropout(a: Tensor, rate: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; identity when rate == 0."""
    if rate == 0.0:
        return a
    keep = (rng.random(a.data.shape) >= rate) / (1.0 - rate)
    return mul(a, Tensor(keep))
