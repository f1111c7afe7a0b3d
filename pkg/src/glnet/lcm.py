"""Local correspondence modelling via pairwise correlation transformation (PCT).

For a current image k and a reference image j:

    A     = proj_q(F_k)^T @ proj_k(F_j)          # [HW, HW] location affinities
    A_bar = max over each row of A                # best match of every k-location in j
    A_til = softmax(A_bar) reshaped to [1, H, W]
    W_kj  = SA(CA(A_til * F_k + F_k))

The N-1 correlation maps of image k are stacked in ascending j and merged by
depth-2 3D convolutions into P_k.
"""
from __future__ import annotations

from typing import List, NamedTuple, Sequence

import numpy as np

from . import tensor as T
from .attention import CASA
from .nn import Conv2d, Conv3d, Module
from .tensor import Tensor


class PCTResult(NamedTuple):
    A: Tensor        # [HW, HW]
    A_bar: Tensor    # [HW]
    A_tilde: Tensor  # [1, H, W]
    W: Tensor        # [C, H, W]


class PCT(Module):
    def __init__(self, channels: int, rng: np.random.Generator, shared_projection: bool = False,
                 reduction: int = 4, sa_kernel: int = 7):
        self.shared_projection = shared_projection
        self.proj_query = Conv2d(channels, channels, 1, rng)
        if not shared_projection:
            self.proj_key = Conv2d(channels, channels, 1, rng)
        self.attend = CASA(channels, rng, reduction, sa_kernel)

    def affinity(self, F_k: Tensor, F_j: Tensor) -> Tensor:
        if F_k.shape != F_j.shape or F_k.ndim != 3:
            raise ValueError(f"PCT needs two equal [C,H,W] maps, got {F_k.shape} and {F_j.shape}")
        c, h, w = F_k.shape
        key_proj = self.proj_query if self.shared_projection else self.proj_key
        q = self.proj_query(F_k).reshape(c, h * w)
        k = key_proj(F_j).reshape(c, h * w)
        return T.matmul(q.T, k)

    def run(self, F_k: Tensor, F_j: Tensor) -> PCTResult:
        c, h, w = F_k.shape
        A = self.affinity(F_k, F_j)
        A_bar = T.rowmax(A)
        A_tilde = T.softmax_vec(A_bar).reshape(1, h, w)
        W = self.attend(A_tilde * F_k + F_k)
        return PCTResult(A, A_bar, A_tilde, W)

    def forward(self, F_k: Tensor, F_j: Tensor) -> Tensor:
        return self.run(F_k, F_j).W


class LCMFuse(Module):
    """Progressive depth-2 3D convs turning N-1 correlation maps into one."""

    def __init__(self, channels: int, n_images: int, rng: np.random.Generator):
        if n_images < 2:
            raise ValueError(f"a group needs at least 2 images, got {n_images}")
        self.n_refs = n_images - 1
        self.convs = [Conv3d(channels, channels, (2, 3, 3), rng, spatial_pad=1)
                      for _ in range(self.n_refs - 1)]
        assert self.n_refs - len(self.convs) == 1

    def forward(self, correlations: Sequence[Tensor]) -> Tensor:
        if len(correlations) == 0:
            raise ValueError("lcm_fuse needs at least one correlation map")
        if len(correlations) != self.n_refs:
            raise ValueError(f"fusion built for {self.n_refs} reference maps, got {len(correlations)}")
        if len(correlations) == 1:
            return correlations[0]
        x = T.stack(correlations, axis=1)
        for conv in self.convs:
            x = T.relu(conv(x))
        return x[:, 0]


class LCM(Module):
    def __init__(self, channels: int, n_images: int, rng: np.random.Generator, shared_projection: bool = False,
                 reduction: int = 4, sa_kernel: int = 7):
        self.n_images = n_images
        self.pct = PCT(channels, rng, shared_projection, reduction, sa_kernel)
        self.fuse = LCMFuse(channels, n_images, rng)

    def forward(self, group: Sequence[Tensor], k: int) -> Tensor:
        """Local inter features P_k of image ``k`` (0-based) against all others."""
        n = len(group)
        if not 0 <= k < n:
            raise IndexError(f"image index {k} out of range for a group of {n}")
        return self.fuse([self.pct(group[k], group[j]) for j in range(n) if j != k])

    def all_images(self, group: Sequence[Tensor]) -> List[Tensor]:
        """P_k for every k. Same maths as ``forward``, with all N(N-1) pairs batched."""
        n = len(group)
        if n != self.n_images:
            raise ValueError(f"LCM built for N={self.n_images}, got {n} images")
        F = T.stack(list(group), axis=0)
        _, c, h, w = F.shape
        pct = self.pct
        key_proj = pct.proj_query if pct.shared_projection else pct.proj_key
        q = pct.proj_query(F).reshape(n, c, h * w)
        kf = key_proj(F).reshape(n, c, h * w)
        ks = np.repeat(np.arange(n), n - 1)
        js = np.array([j for k in range(n) for j in range(n) if j != k])
        A = T.matmul(q[ks].transpose(0, 2, 1), kf[js])            # [P, HW, HW]
        A_tilde = T.softmax(T.amax(A, axis=-1), axis=-1).reshape(len(ks), 1, h, w)
        Fk = F[ks]
        W = pct.attend(A_tilde * Fk + Fk)                            # [P, C, H, W]
        x = W.reshape(n, n - 1, c, h, w).transpose(0, 2, 1, 3, 4)     # [N, C, N-1, H, W]
        for conv in self.fuse.convs:
            x = T.relu(conv(x))
        return T.unstack(x[:, :, 0], axis=0)


def pct(F_k: Tensor, F_j: Tensor, params: PCT) -> Tensor:
    return params(F_k, F_j)


def lcm_fuse(correlations: Sequence[Tensor], params: LCMFuse) -> Tensor:
    return params(correlations)


def lcm_forward(group: Sequence[Tensor], k: int, params: LCM) -> Tensor:
    return params(group, k)
