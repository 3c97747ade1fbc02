"""Generator and patch-discriminator networks built on the autodiff engine."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..autodiff import (
    ParamStore,
    Tensor,
    conv2d,
    conv_transpose2d,
    instance_norm,
    leaky_relu,
    relu,
    sigmoid,
    tanh,
)

ROLES = ("G", "F", "D_X", "D_Y")
INIT_STD = 0.02


def generator_arch(channels: int, base: int = 8, n_down: int = 2, n_res: int = 2) -> dict:
    return {"kind": "generator", "channels": channels, "base": base,
            "n_down": n_down, "n_res": n_res}


def discriminator_arch(channels: int, base: int = 8, n_layers: int = 3,
                       sigmoid_output: bool = False) -> dict:
    return {"kind": "discriminator", "channels": channels, "base": base,
            "n_layers": n_layers, "sigmoid_output": sigmoid_output}


def _conv_param(store: ParamStore, rng: np.random.Generator, name: str, shape,
                transposed: bool = False) -> None:
    store.add(f"{name}.w", rng.normal(0.0, INIT_STD, size=shape))
    store.add(f"{name}.b", np.zeros(shape[1] if transposed else shape[0]))


@dataclass
class TranslatorParams:
    """One network (a generator or a discriminator) and its weights."""

    role: str
    arch: dict
    params: ParamStore

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(f"unknown role {self.role!r}")
        expected = "generator" if self.role in ("G", "F") else "discriminator"
        if self.arch["kind"] != expected:
            raise ValueError(f"role {self.role} needs a {expected} architecture")

    @property
    def channels(self) -> int:
        return self.arch["channels"]

    @property
    def is_generator(self) -> bool:
        return self.arch["kind"] == "generator"

    @property
    def downsample_factor(self) -> int:
        return 2 ** self.arch["n_down"] if self.is_generator else 1

    @classmethod
    def init(cls, role: str, arch: dict, rng: np.random.Generator,
             dtype=np.float32) -> "TranslatorParams":
        store = ParamStore(dtype)
        c, base = arch["channels"], arch["base"]
        if arch["kind"] == "generator":
            _conv_param(store, rng, "in", (base, c, 7, 7))
            width = base
            for i in range(arch["n_down"]):
                _conv_param(store, rng, f"down{i}", (width * 2, width, 3, 3))
                width *= 2
            for i in range(arch["n_res"]):
                _conv_param(store, rng, f"res{i}a", (width, width, 3, 3))
                _conv_param(store, rng, f"res{i}b", (width, width, 3, 3))
            for i in range(arch["n_down"]):
                _conv_param(store, rng, f"up{i}", (width, width // 2, 3, 3), transposed=True)
                width //= 2
            _conv_param(store, rng, "out", (c, width, 7, 7))
        elif arch["kind"] == "discriminator":
            width_in, width = c, base
            for i in range(arch["n_layers"]):
                _conv_param(store, rng, f"disc{i}", (width, width_in, 4, 4))
                width_in, width = width, width * 2
            _conv_param(store, rng, "score", (1, width_in, 4, 4))
        else:
            raise ValueError(f"unknown architecture kind {arch['kind']!r}")
        return cls(role, dict(arch), store)

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[1] != self.channels:
            raise ValueError(f"{self.role} expects {self.channels} channels, got {x.shape[1]}")
        return self._generator(x) if self.is_generator else self._discriminator(x)

    def _w(self, name):
        return self.params[f"{name}.w"], self.params[f"{name}.b"]

    def _generator(self, x: Tensor) -> Tensor:
        f = self.downsample_factor
        if x.shape[2] % f or x.shape[3] % f:
            raise ValueError(f"generator input extents must be multiples of {f}, got {x.shape[2:]}")
        a = self.arch
        h = relu(instance_norm(conv2d(x, *self._w("in"), padding=3, padding_mode="reflect")))
        for i in range(a["n_down"]):
            h = conv2d(h, *self._w(f"down{i}"), stride=2, padding=1, padding_mode="reflect")
            h = relu(instance_norm(h))
        for i in range(a["n_res"]):
            t = relu(instance_norm(conv2d(h, *self._w(f"res{i}a"), padding=1, padding_mode="reflect")))
            t = instance_norm(conv2d(t, *self._w(f"res{i}b"), padding=1, padding_mode="reflect"))
            h = h + t
        for i in range(a["n_down"]):
            h = conv_transpose2d(h, *self._w(f"up{i}"), stride=2, padding=1, output_padding=1)
            h = relu(instance_norm(h))
        return tanh(conv2d(h, *self._w("out"), padding=3, padding_mode="reflect"))

    def _discriminator(self, x: Tensor) -> Tensor:
        h = x
        for i in range(self.arch["n_layers"]):
            h = conv2d(h, *self._w(f"disc{i}"), stride=2, padding=1)
            if i > 0:
                h = instance_norm(h)
            h = leaky_relu(h, 0.2)
        out = conv2d(h, *self._w("score"), padding=1)
        return sigmoid(out) if self.arch.get("sigmoid_output") else out


@dataclass
class CycleNets:
    """The two translators and their adversaries."""

    G: TranslatorParams  # X -> Y
    F: TranslatorParams  # Y -> X
    D_X: TranslatorParams
    D_Y: TranslatorParams

    @classmethod
    def init(cls, channels: int, rng: np.random.Generator, *, base: int = 8, n_down: int = 2,
             n_res: int = 2, disc_base: int = 8, disc_layers: int = 3,
             sigmoid_output: bool = False, dtype=np.float32) -> "CycleNets":
        g_arch = generator_arch(channels, base, n_down, n_res)
        d_arch = discriminator_arch(channels, disc_base, disc_layers, sigmoid_output)
        return cls(
            TranslatorParams.init("G", g_arch, rng, dtype),
            TranslatorParams.init("F", g_arch, rng, dtype),
            TranslatorParams.init("D_X", d_arch, rng, dtype),
            TranslatorParams.init("D_Y", d_arch, rng, dtype),
        )

    def members(self) -> dict[str, TranslatorParams]:
        return {"G": self.G, "F": self.F, "D_X": self.D_X, "D_Y": self.D_Y}
