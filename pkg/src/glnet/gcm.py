"""Global correspondence modelling.

The N intra feature maps of a group are stacked along a new depth axis,
``[C, N, H, W]``, and 3D convolutions with valid depth collapse the image
axis down to one slice. Channel and spatial attention then refine the result.
"""
from __future__ import annotations

from typing import List, NamedTuple, Sequence, Tuple

import numpy as np

from . import tensor as T
from .attention import CASA
from .nn import Conv2d, Conv3d, Module
from .tensor import Tensor


class GlobalCorrespondence(NamedTuple):
    g: Tensor  # before attention
    G: Tensor


def depth_schedule(n_images: int) -> Tuple[int, ...]:
    """Kernel depths of the 3D convs; their valid-depth composition maps N to 1."""
    if n_images < 2:
        raise ValueError(f"a group needs at least 2 images, got {n_images}")
    if n_images == 5:
        return (2, 3, 2)
    return (2,) * (n_images - 1)


def stack_group(features: Sequence[Tensor]) -> Tensor:
    """[C,H,W] x N -> [C,N,H,W], depth order equal to list order."""
    if len(features) < 2:
        raise ValueError(f"a group needs at least 2 images, got {len(features)}")
    return T.stack(features, axis=1)


def unstack_group(stacked: Tensor) -> List[Tensor]:
    return T.unstack(stacked, axis=1)


class GCM(Module):
    def __init__(self, channels: int, n_images: int, rng: np.random.Generator, reduction: int = 4,
                 sa_kernel: int = 7):
        self.n_images = n_images
        self.convs = [Conv3d(channels, channels, (kd, 3, 3), rng, spatial_pad=1)
                      for kd in depth_schedule(n_images)]
        depth = n_images
        for conv in self.convs:
            depth = depth - conv.depth + 1
        assert depth == 1, "depth schedule must collapse the group to a single slice"
        self.attend = CASA(channels, rng, reduction, sa_kernel)

    def forward(self, stacked: Tensor) -> GlobalCorrespondence:
        if stacked.ndim != 4 or stacked.shape[1] != self.n_images:
            raise ValueError(f"GCM built for N={self.n_images}, got group stack {stacked.shape}")
        x = stacked
        for conv in self.convs:
            x = T.relu(conv(x))
        g = x[:, 0]
        return GlobalCorrespondence(g, self.attend(g))


class GCM2D(Module):
    """Ablation variant: the group is folded into channels and mixed with 2D convs."""

    def __init__(self, channels: int, n_images: int, rng: np.random.Generator, reduction: int = 4,
                 sa_kernel: int = 7):
        self.n_images = n_images
        self.convs = [
            Conv2d(channels * n_images, channels, 3, rng, pad=1),
            Conv2d(channels, channels, 3, rng, pad=1),
            Conv2d(channels, channels, 3, rng, pad=1),
        ]
        self.attend = CASA(channels, rng, reduction, sa_kernel)

    def forward(self, stacked: Tensor) -> GlobalCorrespondence:
        if stacked.ndim != 4 or stacked.shape[1] != self.n_images:
            raise ValueError(f"GCM built for N={self.n_images}, got group stack {stacked.shape}")
        c, n, h, w = stacked.shape
        x = stacked.reshape(c * n, h, w)
        for conv in self.convs:
            x = T.relu(conv(x))
        return GlobalCorrespondence(x, self.attend(x))


def gcm_forward(stacked: Tensor, params: Module) -> GlobalCorrespondence:
    return params(stacked)
