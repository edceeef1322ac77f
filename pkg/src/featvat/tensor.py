"""Dense float64 tensors with reverse-mode automatic differentiation.

A small tape engine: each operation records its parent tensors and a
closure that routes the upstream gradient to them.  Buffers are row-major
float64 numpy arrays.  Every operation checks that its result is finite
and raises NumericalError otherwise, so non-finite values never propagate
silently.  Gradients with respect to inputs are first-class (any leaf
built with requires_grad=True receives a .grad), which the adversarial
perturbation search depends on.

backward() recomputes gradients from scratch on every call: it clears the
.grad of every node reachable from the root before accumulating, so
repeated backward passes over the same graph are deterministic and
identical.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .errors import ContractError, NumericalError

LOG_CLAMP = 1e-12


def _as_array(data) -> np.ndarray:
    return np.asarray(data, dtype=np.float64)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_prev", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        arr = _as_array(data)
        if not np.all(np.isfinite(arr)):
            raise NumericalError("tensor created with non-finite values")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._prev: tuple[Tensor, ...] = ()
        self._backward = None

    @classmethod
    def _node(cls, data: np.ndarray, prev: tuple["Tensor", ...], backward, op: str) -> "Tensor":
        """Internal: wrap an op result, pruning the tape below constant regions."""
        if not np.all(np.isfinite(data)):
            raise NumericalError(f"{op} produced non-finite values")
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.requires_grad = any(p.requires_grad for p in prev)
        if out.requires_grad:
            out._prev = prev
            out._backward = backward
        else:
            out._prev = ()
            out._backward = None
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self.data.shape)

    def item(self) -> float:
        return float(self.data)

    def backward(self) -> None:
        """Populate .grad on every tensor reachable from this scalar root."""
        if self.data.size != 1:
            raise ContractError(
                f"backward root must be scalar, got shape {self.shape}"
            )
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._prev:
                if id(parent) not in seen:
                    stack.append((parent, False))
        for node in topo:
            node.grad = None
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None:
                node._backward()

    # arithmetic dunders delegate to the module-level ops below

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_wrap(other), self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return take(self, key)

    def reshape(self, shape) -> "Tensor":
        return reshape(self, shape)

    def sum(self, axis=None, keepdims=False) -> "Tensor":
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False) -> "Tensor":
        return tmean(self, axis=axis, keepdims=keepdims)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _acc(t: Tensor, g: np.ndarray) -> None:
    # never accumulate in place: stored grads may alias other buffers
    t.grad = g if t.grad is None else t.grad + g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a gradient back to the shape of a broadcast operand."""
    if g.shape == tuple(shape):
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    with np.errstate(all="ignore"):
        data = a.data + b.data

    def backward():
        g = out.grad
        if a.requires_grad:
            _acc(a, _unbroadcast(g, a.data.shape))
        if b.requires_grad:
            _acc(b, _unbroadcast(g, b.data.shape))

    out = Tensor._node(data, (a, b), backward, "add")
    return out


def sub(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    with np.errstate(all="ignore"):
        data = a.data - b.data

    def backward():
        g = out.grad
        if a.requires_grad:
            _acc(a, _unbroadcast(g, a.data.shape))
        if b.requires_grad:
            _acc(b, _unbroadcast(-g, b.data.shape))

    out = Tensor._node(data, (a, b), backward, "sub")
    return out


def mul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    with np.errstate(all="ignore"):
        data = a.data * b.data

    def backward():
        g = out.grad
        if a.requires_grad:
            _acc(a, _unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            _acc(b, _unbroadcast(g * a.data, b.data.shape))

    out = Tensor._node(data, (a, b), backward, "mul")
    return out


def div(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    with np.errstate(all="ignore"):
        data = a.data / b.data

    def backward():
        g = out.grad
        if a.requires_grad:
            _acc(a, _unbroadcast(g / b.data, a.data.shape))
        if b.requires_grad:
            _acc(b, _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

    out = Tensor._node(data, (a, b), backward, "div")
    return out


def matmul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ContractError(
            f"matmul shape mismatch: {tuple(a.data.shape)} @ {tuple(b.data.shape)}"
        )
    with np.errstate(all="ignore"):
        data = a.data @ b.data

    def backward():
        g = out.grad
        if a.requires_grad:
            _acc(a, g @ b.data.T)
        if b.requires_grad:
            _acc(b, a.data.T @ g)

    out = Tensor._node(data, (a, b), backward, "matmul")
    return out


def relu(x) -> Tensor:
    """Elementwise max(x, 0); subgradient at 0 is 0."""
    x = _wrap(x)
    data = np.maximum(x.data, 0.0)

    def backward():
        if x.requires_grad:
            _acc(x, out.grad * (x.data > 0))

    out = Tensor._node(data, (x,), backward, "relu")
    return out


def softmax(x) -> Tensor:
    """Distribution over the last axis, computed with max-subtraction."""
    x = _wrap(x)
    with np.errstate(all="ignore"):
        shifted = x.data - np.max(x.data, axis=-1, keepdims=True)
        e = np.exp(shifted)
        data = e / np.sum(e, axis=-1, keepdims=True)

    def backward():
        if x.requires_grad:
            g = out.grad
            inner = np.sum(g * data, axis=-1, keepdims=True)
            _acc(x, data * (g - inner))

    out = Tensor._node(data, (x,), backward, "softmax")
    return out


def log(x) -> Tensor:
    """Natural log with the argument clamped to >= LOG_CLAMP.

    The clamp keeps entropies and divergences of near-degenerate
    distributions finite; below the clamp the forward is flat, so the
    gradient there is exactly zero.
    """
    x = _wrap(x)
    clamped = np.maximum(x.data, LOG_CLAMP)
    data = np.log(clamped)

    def backward():
        if x.requires_grad:
            mask = x.data >= LOG_CLAMP
            _acc(x, np.where(mask, out.grad / clamped, 0.0))

    out = Tensor._node(data, (x,), backward, "log")
    return out


def tsum(x, axis=None, keepdims=False) -> Tensor:
    x = _wrap(x)
    with np.errstate(all="ignore"):
        data = x.data.sum(axis=axis, keepdims=keepdims)

    def backward():
        if x.requires_grad:
            g = out.grad
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            _acc(x, np.broadcast_to(g, x.data.shape))

    out = Tensor._node(_as_array(data), (x,), backward, "sum")
    return out


def tmean(x, axis=None, keepdims=False) -> Tensor:
    x = _wrap(x)
    count = x.data.size if axis is None else x.data.shape[axis]
    with np.errstate(all="ignore"):
        data = x.data.mean(axis=axis, keepdims=keepdims)

    def backward():
        if x.requires_grad:
            g = out.grad
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            _acc(x, np.broadcast_to(g, x.data.shape) / count)

    out = Tensor._node(_as_array(data), (x,), backward, "mean")
    return out


def concat(tensors: Sequence) -> Tensor:
    """Concatenate along the last axis."""
    ts = [_wrap(t) for t in tensors]
    if not ts:
        raise ContractError("concat requires at least one tensor")
    data = np.concatenate([t.data for t in ts], axis=-1)
    sizes = [t.data.shape[-1] for t in ts]
    splits = np.cumsum(sizes)[:-1]

    def backward():
        pieces = np.split(out.grad, splits, axis=-1)
        for t, piece in zip(ts, pieces):
            if t.requires_grad:
                _acc(t, piece)

    out = Tensor._node(data, tuple(ts), backward, "concat")
    return out


def take(x, key) -> Tensor:
    """Basic slicing/indexing (ints, slices, tuples of them)."""
    x = _wrap(x)
    data = np.ascontiguousarray(x.data[key])

    def backward():
        if x.requires_grad:
            buf = np.zeros_like(x.data)
            buf[key] += out.grad
            _acc(x, buf)

    out = Tensor._node(data, (x,), backward, "slice")
    return out


def reshape(x, shape) -> Tensor:
    x = _wrap(x)
    data = x.data.reshape(shape)

    def backward():
        if x.requires_grad:
            _acc(x, out.grad.reshape(x.data.shape))

    out = Tensor._node(data, (x,), backward, "reshape")
    return out


def stop_gradient(x) -> Tensor:
    """Identity forward, zero backward: shares the buffer, drops the tape."""
    x = _wrap(x)
    out = Tensor.__new__(Tensor)
    out.data = x.data
    out.grad = None
    out.requires_grad = False
    out._prev = ()
    out._backward = None
    return out


def l2_norm(x, axis=None, keepdims=False) -> Tensor:
    """Euclidean norm over all entries or one axis; subgradient 0 at 0."""
    x = _wrap(x)
    with np.errstate(all="ignore"):
        sq = np.sum(x.data * x.data, axis=axis, keepdims=keepdims)
        data = np.sqrt(sq)

    def backward():
        if x.requires_grad:
            g = out.grad
            denom = data
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
                denom = np.expand_dims(denom, axis)
            _acc(x, g * x.data / np.maximum(denom, 1e-300))

    out = Tensor._node(_as_array(data), (x,), backward, "l2_norm")
    return out


def grl(x, beta: float) -> Tensor:
    """Gradient reversal: identity forward, upstream gradient times -beta backward."""
    x = _wrap(x)
    if beta < 0:
        raise ContractError(f"gradient reversal strength must be non-negative, got {beta}")

    def backward():
        if x.requires_grad:
            _acc(x, -beta * out.grad)

    out = Tensor._node(x.data, (x,), backward, "grl")
    return out
