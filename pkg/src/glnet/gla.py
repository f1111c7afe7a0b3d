"""Aggregation of global (G) and local (P_k) correspondence into inter features."""
from __future__ import annotations

from typing import Sequence

import numpy as np

from . import tensor as T
from .attention import CASA
from .nn import Conv3d, Module
from .tensor import Tensor


class GLA(Module):
    """``F_ie = SA(CA(relu(conv3d_2x3x3([G, P]))))`` with G stacked before P on depth."""

    def __init__(self, channels: int, rng: np.random.Generator, reduction: int = 4, sa_kernel: int = 7):
        self.conv = Conv3d(channels, channels, (2, 3, 3), rng, spatial_pad=1)
        self.attend = CASA(channels, rng, reduction, sa_kernel)

    def forward(self, G: Tensor, P: Tensor) -> Tensor:
        if G.shape != P.shape:
            raise ValueError(f"G {G.shape} and P {P.shape} must match")
        x = T.relu(self.conv(T.stack([G, P], axis=-3)))
        return self.attend(x[..., 0, :, :])

    def all_images(self, G: Tensor, P: Sequence[Tensor]) -> Tensor:
        """F_ie for every image at once: [N, C, H, W] with the shared G."""
        P = T.stack(list(P), axis=0)
        Gs = T.stack([G] * P.shape[0], axis=0)
        x = T.relu(self.conv(T.stack([Gs, P], axis=-3)))
        return self.attend(x[..., 0, :, :])

    def single_branch(self, x: Tensor) -> Tensor:
        """Used when one branch is ablated: only the attention pair is applied."""
        return self.attend(x)


def gla_forward(G: Tensor, P: Tensor, params: GLA) -> Tensor:
    return params(G, P)
