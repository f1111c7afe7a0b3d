"""Channel and spatial attention gates.

Both blocks accept ``[C, H, W]`` or batched ``[B, C, H, W]`` features and
return a tensor of the same shape.
"""
from __future__ import annotations

import numpy as np

from . import tensor as T
from .nn import Conv2d, Module
from .tensor import Tensor


class ChannelAttention(Module):
    """Squeeze-excitation gate: one scalar in (0, 1) per channel.

    ``s = sigmoid(expand(relu(reduce(avgpool(F)))))`` and the output is ``s[c] * F[c]``.
    """

    def __init__(self, channels: int, rng: np.random.Generator, reduction: int = 4):
        if reduction < 1 or channels % reduction:
            raise ValueError(f"reduction ratio {reduction} must divide {channels} channels")
        self.channels = channels
        self.reduce = Conv2d(channels, channels // reduction, 1, rng)
        self.expand = Conv2d(channels // reduction, channels, 1, rng)

    def gate(self, F: Tensor) -> Tensor:
        if F.shape[-3] != self.channels:
            raise ValueError(f"channel attention built for {self.channels} channels, got {F.shape}")
        pooled = F.mean(axis=(-2, -1), keepdims=True)
        return T.sigmoid(self.expand(T.relu(self.reduce(pooled))))

    def forward(self, F: Tensor) -> Tensor:
        return F * self.gate(F)


class SpatialAttention(Module):
    """Gate map shared by all channels, from a k x k conv over channel mean and max."""

    def __init__(self, rng: np.random.Generator, kernel: int = 7):
        if kernel % 2 == 0:
            raise ValueError("spatial attention kernel must be odd")
        self.conv = Conv2d(2, 1, kernel, rng, pad=(kernel - 1) // 2)

    def gate(self, F: Tensor) -> Tensor:
        if F.ndim not in (3, 4):
            raise ValueError(f"spatial attention expects [C,H,W] or [B,C,H,W], got {F.shape}")
        pooled = T.concat([F.mean(axis=-3, keepdims=True), F.max(axis=-3, keepdims=True)], axis=-3)
        return T.sigmoid(self.conv(pooled))

    def forward(self, F: Tensor) -> Tensor:
        return F * self.gate(F)


class CASA(Module):
    """``SA(CA(x))``, the enhancement pair used after every correspondence stage."""

    def __init__(self, channels: int, rng: np.random.Generator, reduction: int = 4, kernel: int = 7):
        self.ca = ChannelAttention(channels, rng, reduction)
        self.sa = SpatialAttention(rng, kernel)

    def forward(self, x: Tensor) -> Tensor:
        return self.sa(self.ca(x))


def channel_attention(F: Tensor, params: ChannelAttention) -> Tensor:
    return params(F)


def spatial_attention(F: Tensor, params: SpatialAttention) -> Tensor:
    return params(F)
