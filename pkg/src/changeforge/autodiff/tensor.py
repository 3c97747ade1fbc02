"""Dense tensors that record the operations applied to them.

Every op returns a new :class:`Tensor` holding its forward value, its input
nodes and a closure that pushes the output gradient back to those inputs.
:func:`backward` walks the recorded graph in reverse topological order.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Optional, Sequence

import numpy as np

_grad_enabled = True


class GraphError(RuntimeError):
    pass


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _grad_enabled
    prev, _grad_enabled = _grad_enabled, False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "parents", "op", "name", "_backward")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None,
                 dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.parents: tuple[Tensor, ...] = ()
        self.op = "leaf"
        self.name = name
        self._backward: Optional[Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]] = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def __float__(self) -> float:
        if self.data.size != 1:
            raise TypeError(f"only single-value tensors convert to float, shape is {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op}, dtype={self.dtype})"

    def __add__(self, other):
        return add(self, other) if isinstance(other, Tensor) else add_scalar(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other) if isinstance(other, Tensor) else add_scalar(self, -other)

    def __rsub__(self, other):
        return add_scalar(scalar_mul(self, -1.0), other)

    def __mul__(self, other):
        return mul(self, other) if isinstance(other, Tensor) else scalar_mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scalar_mul(self, -1.0)


def _make(data: np.ndarray, parents: Sequence[Tensor], op: str, backward_fn) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.parents = tuple(parents)
        out.op = op
        out._backward = backward_fn
    return out


def _check_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    state: dict[int, int] = {}  # 1 = on stack, 2 = done
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        key = id(node)
        if expanded:
            state[key] = 2
            order.append(node)
            continue
        s = state.get(key)
        if s == 2:
            continue
        if s == 1:
            raise GraphError("cycle detected in computation graph")
        state[key] = 1
        stack.append((node, True))
        for p in node.parents:
            ps = state.get(id(p))
            if ps == 1:
                raise GraphError("cycle detected in computation graph")
            if ps is None and p.requires_grad:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf."""
    if loss.size != 1:
        raise GraphError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    order = _topo_order(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node.parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


def grad(loss: Tensor, wrt: Sequence[Tensor]) -> list[np.ndarray]:
    """Gradients of ``loss`` for ``wrt`` (zeros where unreachable); clears old grads."""
    for t in wrt:
        t.grad = None
    backward(loss)
    return [t.grad if t.grad is not None else np.zeros_like(t.data) for t in wrt]


# elementwise and reduction ops

def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "add")
    return _make(a.data + b.data, (a, b), "add", lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "sub")
    return _make(a.data - b.data, (a, b), "sub", lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "mul")
    return _make(a.data * b.data, (a, b), "mul", lambda g: (g * b.data, g * a.data))


def scalar_mul(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _make(a.data * a.dtype.type(c), (a,), "scalar_mul", lambda g: (g * g.dtype.type(c),))


def add_scalar(a: Tensor, c: float) -> Tensor:
    return _make(a.data + a.dtype.type(c), (a,), "add_scalar", lambda g: (g,))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _make(np.maximum(a.data, 0), (a,), "relu", lambda g: (g * mask,))


def leaky_relu(a: Tensor, alpha: float = 0.2) -> Tensor:
    slope = np.where(a.data > 0, 1.0, alpha).astype(a.dtype)
    return _make(a.data * slope, (a,), "leaky_relu", lambda g: (g * slope,))


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return _make(y, (a,), "tanh", lambda g: (g * (1 - y * y),))


def sigmoid(a: Tensor) -> Tensor:
    y = 0.5 * (1 + np.tanh(0.5 * a.data))
    return _make(y, (a,), "sigmoid", lambda g: (g * y * (1 - y),))


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0):
        raise FloatingPointError("log of non-positive value")
    return _make(np.log(a.data), (a,), "log", lambda g: (g / a.data,))


def square(a: Tensor) -> Tensor:
    return _make(a.data * a.data, (a,), "square", lambda g: (2 * g * a.data,))


def mean_reduce(a: Tensor) -> Tensor:
    n = a.size
    return _make(np.asarray(a.data.mean(), dtype=a.dtype), (a,), "mean",
                 lambda g: (np.full(a.shape, g / n, dtype=a.dtype),))


def sum_reduce(a: Tensor) -> Tensor:
    return _make(np.asarray(a.data.sum(), dtype=a.dtype), (a,), "sum",
                 lambda g: (np.full(a.shape, g, dtype=a.dtype),))


def l1_distance(a: Tensor, b: Tensor) -> Tensor:
    """Mean absolute difference, a scalar."""
    _check_same_shape(a, b, "l1_distance")
    d = a.data - b.data
    n = d.size
    sgn = np.sign(d)

    def bw(g):
        ga = sgn * (g / n)
        return ga, -ga

    return _make(np.asarray(np.abs(d).mean(), dtype=d.dtype), (a, b), "l1_distance", bw)


def square_distance(a: Tensor, b: Tensor) -> Tensor:
    """Mean squared difference, a scalar."""
    _check_same_shape(a, b, "square_distance")
    d = a.data - b.data
    n = d.size

    def bw(g):
        ga = d * (2 * g / n)
        return ga, -ga

    return _make(np.asarray((d * d).mean(), dtype=d.dtype), (a, b), "square_distance", bw)


def mean_square_to_const(a: Tensor, c: float) -> Tensor:
    """mean((a - c)^2) for a scalar target, as used by least-squares adversarial losses."""
    d = a.data - a.dtype.type(c)
    n = d.size
    return _make(np.asarray((d * d).mean(), dtype=a.dtype), (a,), "mean_square_to_const",
                 lambda g: (d * (2 * g / n),))


def mean_log(a: Tensor) -> Tensor:
    """mean(log a); inputs must lie in (0, inf)."""
    if np.any(a.data <= 0):
        raise FloatingPointError("log of non-positive value")
    n = a.size
    return _make(np.asarray(np.log(a.data).mean(), dtype=a.dtype), (a,), "mean_log",
                 lambda g: (g / (n * a.data),))
