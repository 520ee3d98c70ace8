"""Small reverse-mode autodiff over dense float64 matrices.

Only what the graph models need is here: dense matmul, broadcasting
add/mul, concatenation, constant sparse aggregation (gather / scatter /
neighbor sums are all expressed as ``spmm`` with a fixed sparse matrix),
sigmoid, leaky-relu, segment softmax and batch-norm.

Every op returns a new :class:`Tensor` holding a closure that maps the
output gradient to its parents' gradients.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
from scipy.special import expit

LEAKY_SLOPE = 0.2
BN_EPS = 1e-5
BN_MOMENTUM = 0.1

# Set to False to skip the NaN/Inf trap on every op output.
CHECK_FINITE = True


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_done", "name")

    def __init__(self, data, requires_grad=False, name=""):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        elif arr.ndim > 2:
            raise ValueError(f"rank {arr.ndim} tensors are not supported")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(arr) if requires_grad else None
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None
        self._done = False
        self.name = name

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError("item() needs a single-element tensor")
        return float(self.data[0, 0])

    def __matmul__(self, other):
        return matmul(self, other)

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __sub__(self, other):
        return add(self, scale(other, -1.0))

    def backward(self):
        """Accumulate d(self)/d(leaf) into every reachable leaf's ``grad``."""
        if self.data.size != 1:
            raise ValueError("backward() needs a scalar loss")
        if self._done:
            raise RuntimeError("backward() already ran on this graph; rebuild the forward pass")
        order = _topo_order(self)
        grads = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    node.grad += g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not _tracks(parent):
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
        self._done = True


def _tracks(t: Tensor) -> bool:
    return t.requires_grad or t._backward is not None


def _topo_order(root: Tensor) -> list[Tensor]:
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
            if id(p) not in seen and _tracks(p):
                stack.append((p, False))
    return order


def _result(data, parents, backward) -> Tensor:
    if CHECK_FINITE and not np.all(np.isfinite(data)):
        raise FloatingPointError("non-finite value produced in forward pass")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.requires_grad = False
    out.grad = None
    out._done = False
    out.name = ""
    if any(_tracks(p) for p in parents):
        out._parents = tuple(parents)
        out._backward = backward
    else:
        out._parents = ()
        out._backward = None
    return out


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    if shape[0] == 1 and grad.shape[0] != 1:
        grad = grad.sum(axis=0, keepdims=True)
    if shape[1] == 1 and grad.shape[1] != 1:
        grad = grad.sum(axis=1, keepdims=True)
    return grad


# -- dense ops ---------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch {a.shape} @ {b.shape}")

    ta, tb = _tracks(a), _tracks(b)

    def back(g):
        return (g @ b.data.T if ta else None), (a.data.T @ g if tb else None)

    return _result(a.data @ b.data, (a, b), back)


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = a.data + b.data
    except ValueError:
        raise ValueError(f"add shape mismatch {a.shape} + {b.shape}") from None

    ta, tb = _tracks(a), _tracks(b)

    def back(g):
        return (_unbroadcast(g, a.shape) if ta else None), (_unbroadcast(g, b.shape) if tb else None)

    return _result(out, (a, b), back)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product with row/column broadcasting."""
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = a.data * b.data
    except ValueError:
        raise ValueError(f"mul shape mismatch {a.shape} * {b.shape}") from None

    ta, tb = _tracks(a), _tracks(b)

    def back(g):
        return ((_unbroadcast(g * b.data, a.shape) if ta else None),
                (_unbroadcast(g * a.data, b.shape) if tb else None))

    return _result(out, (a, b), back)


def scale(a: Tensor, c) -> Tensor:
    """Multiply by a constant scalar or a constant broadcastable array."""
    a = as_tensor(a)
    c = np.asarray(c, dtype=np.float64)
    return _result(a.data * c, (a,), lambda g: (_unbroadcast(g * c, a.shape),))


def concat(parts: list[Tensor], axis: int = 1) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    sizes = [p.shape[axis] for p in parts]
    bounds = np.cumsum([0] + sizes)
    out = np.concatenate([p.data for p in parts], axis=axis)

    def back(g):
        if axis == 1:
            return tuple(g[:, lo:hi] for lo, hi in zip(bounds[:-1], bounds[1:]))
        return tuple(g[lo:hi] for lo, hi in zip(bounds[:-1], bounds[1:]))

    return _result(out, tuple(parts), back)


def columns(a: Tensor, lo: int, hi: int) -> Tensor:
    a = as_tensor(a)

    def back(g):
        full = np.zeros_like(a.data)
        full[:, lo:hi] = g
        return (full,)

    return _result(a.data[:, lo:hi].copy(), (a,), back)


def total(a: Tensor) -> Tensor:
    a = as_tensor(a)
    return _result(np.array([[a.data.sum()]]), (a,), lambda g: (np.full_like(a.data, g[0, 0]),))


def mean(a: Tensor) -> Tensor:
    a = as_tensor(a)
    n = a.data.size
    return _result(np.array([[a.data.mean()]]), (a,), lambda g: (np.full_like(a.data, g[0, 0] / n),))


def mse(pred: Tensor, target) -> Tensor:
    pred = as_tensor(pred)
    target = np.asarray(target, dtype=np.float64).reshape(pred.shape)
    diff = pred.data - target
    n = diff.size
    return _result(np.array([[np.mean(diff * diff)]]), (pred,), lambda g: (g[0, 0] * 2.0 * diff / n,))


# -- activations -------------------------------------------------------------

def sigmoid(a: Tensor) -> Tensor:
    a = as_tensor(a)
    out = expit(a.data)
    return _result(out, (a,), lambda g: (g * out * (1.0 - out),))


def leaky_relu(a: Tensor, slope: float = LEAKY_SLOPE) -> Tensor:
    a = as_tensor(a)
    factor = np.where(a.data > 0, 1.0, slope)
    return _result(a.data * factor, (a,), lambda g: (g * factor,))


def identity(a: Tensor) -> Tensor:
    return as_tensor(a)


# -- sparse aggregation ------------------------------------------------------

def spmm(matrix: sp.spmatrix, a: Tensor) -> Tensor:
    """``matrix @ a`` for a constant sparse matrix (gather, scatter, neighbor sums)."""
    a = as_tensor(a)
    if matrix.shape[1] != a.shape[0]:
        raise ValueError(f"spmm shape mismatch {matrix.shape} @ {a.shape}")
    return _result(np.asarray(matrix @ a.data), (a,), lambda g: (np.asarray(matrix.T @ g),))


def segment_softmax(logits: Tensor, segments: np.ndarray, n_segments: int) -> Tensor:
    """Softmax of a column of logits within groups sharing a segment id.

    ``segments`` must be sorted ascending (edges grouped by target node) and
    every segment in ``range(n_segments)`` must be non-empty.
    """
    logits = as_tensor(logits)
    if logits.shape[1] != 1:
        raise ValueError("segment_softmax expects a single logit column")
    segments = np.asarray(segments)
    if segments.size != logits.shape[0]:
        raise ValueError("segments length must match number of logits")
    counts = np.bincount(segments, minlength=n_segments)
    if counts.size > n_segments or np.any(counts == 0):
        raise ValueError("softmax over an empty index set")
    if np.any(np.diff(segments) < 0):
        raise ValueError("segments must be sorted")
    starts = np.concatenate(([0], np.cumsum(counts)[:-1]))
    x = logits.data[:, 0]
    seg_max = np.maximum.reduceat(x, starts)
    ex = np.exp(x - seg_max[segments])
    denom = np.add.reduceat(ex, starts)
    out = (ex / denom[segments])[:, None]

    def back(g):
        dot = np.add.reduceat((out * g)[:, 0], starts)
        return (out * (g - dot[segments][:, None]),)

    return _result(out, (logits,), back)


# -- batch-norm --------------------------------------------------------------

class BatchNormState:
    """Affine parameters plus running statistics for one normalized layer."""

    def __init__(self, width: int, name: str = "bn"):
        self.gamma = Tensor(np.ones((1, width)), requires_grad=True, name=f"{name}.gamma")
        self.beta = Tensor(np.zeros((1, width)), requires_grad=True, name=f"{name}.beta")
        self.running_mean = np.zeros((1, width))
        self.running_var = np.ones((1, width))


def batch_norm(a: Tensor, state: BatchNormState, training: bool) -> Tensor:
    """Normalize each column over all rows (one graph per batch)."""
    a = as_tensor(a)
    x = a.data
    n = x.shape[0]
    if training and n > 1:
        mu = x.mean(axis=0, keepdims=True)
        var = x.var(axis=0, keepdims=True)
        state.running_mean = (1 - BN_MOMENTUM) * state.running_mean + BN_MOMENTUM * mu
        state.running_var = (1 - BN_MOMENTUM) * state.running_var + BN_MOMENTUM * var * n / (n - 1)
        batch_stats = True
    else:
        mu, var = state.running_mean, state.running_var
        batch_stats = False
    inv = 1.0 / np.sqrt(var + BN_EPS)
    xhat = (x - mu) * inv
    gamma, beta = state.gamma, state.beta
    out = xhat * gamma.data + beta.data

    def back(g):
        dgamma = (g * xhat).sum(axis=0, keepdims=True)
        dbeta = g.sum(axis=0, keepdims=True)
        dxhat = g * gamma.data
        if batch_stats:
            dx = inv / n * (n * dxhat - dxhat.sum(axis=0, keepdims=True)
                            - xhat * (dxhat * xhat).sum(axis=0, keepdims=True))
        else:
            dx = dxhat * inv
        return dx, dgamma, dbeta

    return _result(out, (a, gamma, beta), back)


# -- gradient checking -------------------------------------------------------

def numeric_grad(f, param: Tensor, index: tuple[int, int], h: float = 1e-5) -> float:
    """Central difference of scalar ``f()`` w.r.t. one entry of ``param``."""
    old = param.data[index]
    param.data[index] = old + h
    up = f().item()
    param.data[index] = old - h
    down = f().item()
    param.data[index] = old
    return (up - down) / (2 * h)


def relative_error(a: float, b: float, floor: float = 1e-8) -> float:
    return abs(a - b) / max(abs(a), abs(b), floor)
