"""Parameters, a small Module base class and the convolution layers."""
from __future__ import annotations

from collections import OrderedDict
from typing import Dict, Iterator, Tuple

import numpy as np

from . import tensor as T
from .tensor import Tensor


class Parameter(Tensor):
    """A learnable leaf tensor. Its name comes from its position in the module tree."""

    __slots__ = ()

    def __init__(self, data):
        super().__init__(data, requires_grad=True)


def glorot_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape).astype(np.float32)


class Module:
    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Parameter]]:
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(value, Parameter):
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(full + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((n, p.data.copy()) for n, p in self.named_parameters())

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        params = dict(self.named_parameters())
        missing = set(params) - set(state)
        unexpected = set(state) - set(params)
        if missing or unexpected:
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(unexpected)}")
        for name, p in params.items():
            arr = np.asarray(state[name])
            if arr.shape != p.shape:
                raise ValueError(f"{name}: shape {arr.shape} != {p.shape}")
            p.data = arr.astype(p.dtype, copy=True)

    def astype(self, dtype) -> "Module":
        """Cast every parameter in place (used to run gradient checks in float64)."""
        for p in self.parameters():
            p.data = p.data.astype(dtype)
            p.grad = None
        return self

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())


class Conv2d(Module):
    def __init__(self, c_in: int, c_out: int, k: int, rng: np.random.Generator, stride: int = 1, pad: int = 0):
        fan = k * k
        self.weight = Parameter(glorot_uniform(rng, (c_out, c_in, k, k), c_in * fan, c_out * fan))
        self.bias = Parameter(np.zeros(c_out, dtype=np.float32))
        self.stride = stride
        self.pad = pad

    def forward(self, x: Tensor) -> Tensor:
        return T.conv2d(x, self.weight, self.bias, self.stride, self.pad)


class Conv3d(Module):
    """Same-channel-friendly 3D conv; depth is valid-only, H and W padded by ``spatial_pad``."""

    def __init__(self, c_in: int, c_out: int, kernel: Tuple[int, int, int], rng: np.random.Generator,
                 spatial_pad: int = 1):
        fan = int(np.prod(kernel))
        self.weight = Parameter(glorot_uniform(rng, (c_out, c_in) + tuple(kernel), c_in * fan, c_out * fan))
        self.bias = Parameter(np.zeros(c_out, dtype=np.float32))
        self.spatial_pad = spatial_pad

    @property
    def depth(self) -> int:
        return self.weight.shape[2]

    def forward(self, x: Tensor) -> Tensor:
        return T.conv3d(x, self.weight, self.bias, self.spatial_pad)


class ConvTranspose2d(Module):
    def __init__(self, c_in: int, c_out: int, rng: np.random.Generator, k: int = 4):
        fan = k * k
        self.weight = Parameter(glorot_uniform(rng, (c_in, c_out, k, k), c_in * fan, c_out * fan))
        self.bias = Parameter(np.zeros(c_out, dtype=np.float32))

    def forward(self, x: Tensor) -> Tensor:
        return T.transposed_conv2d(x, self.weight, self.bias)
