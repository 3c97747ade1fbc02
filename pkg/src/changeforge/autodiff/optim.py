"""Parameter storage and the adaptive-moment (Adam) update."""

from __future__ import annotations

from collections import OrderedDict
from typing import Iterator, Mapping, Optional

import numpy as np

from .tensor import Tensor


class NonFiniteGradientError(FloatingPointError):
    """Raised instead of applying an update with NaN/Inf gradients."""


class ParamStore:
    """Named trainable tensors plus their Adam moment accumulators."""

    def __init__(self, dtype=np.float32):
        self.dtype = np.dtype(dtype)
        self.params: "OrderedDict[str, Tensor]" = OrderedDict()
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.step = 0

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self.params:
            raise KeyError(f"duplicate parameter {name!r}")
        t = Tensor(np.array(value, dtype=self.dtype), requires_grad=True, name=name)
        self.params[name] = t
        self.m[name] = np.zeros_like(t.data)
        self.v[name] = np.zeros_like(t.data)
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self.params)

    def __len__(self) -> int:
        return len(self.params)

    def items(self):
        return self.params.items()

    def tensors(self) -> list[Tensor]:
        return list(self.params.values())

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.grad = None

    def grads(self) -> dict[str, np.ndarray]:
        return {k: (t.grad if t.grad is not None else np.zeros_like(t.data))
                for k, t in self.params.items()}

    def num_values(self) -> int:
        return sum(t.size for t in self.params.values())

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: t.data.copy() for k, t in self.params.items()}

    def load_snapshot(self, values: Mapping[str, np.ndarray]) -> None:
        for k, t in self.params.items():
            v = np.asarray(values[k])
            if v.shape != t.shape:
                raise ValueError(f"{k}: shape {v.shape} does not match {t.shape}")
            t.data = v.astype(self.dtype, copy=True)

    def astype(self, dtype) -> "ParamStore":
        """Copy with values cast to ``dtype``; optimizer state is reset."""
        out = ParamStore(dtype)
        for k, t in self.params.items():
            out.add(k, t.data)
        return out


def adam_step(params: ParamStore, grads: Optional[Mapping[str, np.ndarray]] = None,
              lr: float = 2e-4, beta1: float = 0.5, beta2: float = 0.999,
              eps: float = 1e-8) -> None:
    """One in-place Adam update with bias correction.

    ``grads`` defaults to the ``.grad`` fields of the stored tensors. Nothing
    is modified if any gradient is non-finite.
    """
    if grads is None:
        grads = params.grads()
    for name in params:
        g = grads.get(name)
        if g is None:
            continue
        if g.shape != params[name].shape:
            raise ValueError(f"{name}: gradient shape {g.shape} != {params[name].shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(f"non-finite gradient for parameter {name!r}")
    params.step += 1
    t = params.step
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    dt = params.dtype.type
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        m, v = params.m[name], params.v[name]
        m *= dt(beta1)
        m += dt(1 - beta1) * g
        v *= dt(beta2)
        v += dt(1 - beta2) * (g * g)
        m_hat = m / dt(bc1)
        v_hat = v / dt(bc2)
        p.data = (p.data - dt(lr) * m_hat / (np.sqrt(v_hat) + dt(eps))).astype(params.dtype)
