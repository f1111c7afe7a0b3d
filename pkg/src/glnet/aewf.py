"""Adaptive intra/inter weighting fusion and the upsampling decoder."""
from __future__ import annotations

from typing import NamedTuple, Optional

import numpy as np

from . import tensor as T
from .attention import ChannelAttention
from .nn import Conv2d, ConvTranspose2d, Module
from .tensor import Tensor


class FusionState(NamedTuple):
    F_cat: Tensor
    alpha: Tensor
    F_co: Tensor


class AEWF(Module):
    """Learn a per-element weight ``alpha`` and blend inter and intra features.

    ``F_co = alpha * F_ie + (1 - alpha) * F_ia`` where
    ``alpha = sigmoid(bottleneck(CA(conv1x1([F_ie, F_ia]))))``.
    """

    def __init__(self, channels: int, rng: np.random.Generator, reduction: int = 4):
        if channels % reduction:
            raise ValueError(f"bottleneck ratio {reduction} must divide {channels}")
        self.reduce = Conv2d(2 * channels, channels, 1, rng)
        self.ca = ChannelAttention(channels, rng, reduction)
        self.squeeze = Conv2d(channels, channels // reduction, 1, rng)
        self.unsqueeze = Conv2d(channels // reduction, channels, 1, rng)

    def run(self, F_ia: Tensor, F_ie: Tensor, alpha_override: Optional[float] = None) -> FusionState:
        if F_ia.shape != F_ie.shape:
            raise ValueError(f"intra {F_ia.shape} and inter {F_ie.shape} features must match")
        F_cat = self.reduce(T.concat([F_ie, F_ia], axis=-3))
        if alpha_override is None:
            alpha = T.sigmoid(self.unsqueeze(T.relu(self.squeeze(self.ca(F_cat)))))
        else:
            # test hook: pin the weighting map to a constant
            alpha = T.Tensor(np.full(F_ia.shape, alpha_override, dtype=F_ia.dtype))
        F_co = alpha * F_ie + (1.0 - alpha) * F_ia
        return FusionState(F_cat, alpha, F_co)

    def forward(self, F_ia: Tensor, F_ie: Tensor) -> Tensor:
        return self.run(F_ia, F_ie).F_co


class Decoder(Module):
    """``levels`` transposed-conv x2 blocks (channels halve, floor 8), then 1x1 conv and sigmoid."""

    def __init__(self, channels: int, levels: int, rng: np.random.Generator, min_channels: int = 8):
        self.levels = levels
        self.ups = []
        c = channels
        for _ in range(levels):
            nxt = max(min_channels, c // 2)
            self.ups.append(ConvTranspose2d(c, nxt, rng))
            c = nxt
        self.head = Conv2d(c, 1, 1, rng)

    def logits(self, x: Tensor) -> Tensor:
        for up in self.ups:
            x = T.relu(up(x))
        return self.head(x)

    def forward(self, x: Tensor) -> Tensor:
        return T.sigmoid(self.logits(x))


def aewf(F_ia: Tensor, F_ie: Tensor, params: AEWF) -> FusionState:
    return params.run(F_ia, F_ie)


def decode(F_co: Tensor, params: Decoder, image_side: Optional[int] = None) -> Tensor:
    if image_side is not None:
        ratio = image_side / F_co.shape[-1]
        if ratio != 2 ** params.levels or image_side % F_co.shape[-1]:
            raise ValueError(f"image side {image_side} is not 2^{params.levels} x feature side {F_co.shape[-1]}")
    return params(F_co)
