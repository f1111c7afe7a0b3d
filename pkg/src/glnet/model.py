"""Backbone and the full group-to-maps network."""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from typing import List, Sequence, Union

import numpy as np

from . import tensor as T
from .aewf import AEWF, Decoder
from .gcm import GCM, GCM2D, stack_group
from .gla import GLA
from .lcm import LCM
from .nn import Conv2d, Module
from .tensor import Tensor


@dataclass
class ModelConfig:
    group_size: int = 5
    image_size: int = 160
    channels: int = 32
    stride: int = 8
    disable_gcm: bool = False
    disable_lcm: bool = False
    gcm_use_2d: bool = False
    single_image_baseline: bool = False
    shared_projection: bool = False
    reduction: int = 4
    sa_kernel: int = 7
    seed: int = 0

    def __post_init__(self):
        self.validate()

    @property
    def levels(self) -> int:
        return int(np.log2(self.stride))

    @property
    def feature_size(self) -> int:
        return self.image_size // self.stride

    def validate(self) -> None:
        if self.group_size < 2:
            raise ValueError("group_size must be at least 2")
        if self.stride < 2 or self.stride & (self.stride - 1):
            raise ValueError(f"stride must be a power of two >= 2, got {self.stride}")
        if self.image_size % self.stride:
            raise ValueError(f"image_size {self.image_size} not divisible by stride {self.stride}")
        if self.channels % self.reduction:
            raise ValueError(f"channels {self.channels} not divisible by reduction {self.reduction}")
        if self.disable_gcm and self.disable_lcm and not self.single_image_baseline:
            raise ValueError("disabling both GCM and LCM requires single_image_baseline=True")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise KeyError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


def backbone_widths(channels: int, levels: int, floor: int = 8) -> List[int]:
    return [max(floor, channels >> (levels - 1 - i)) for i in range(levels)]


class Backbone(Module):
    """``levels`` blocks of (3x3 conv, ReLU, 4x4 stride-2 conv, ReLU), shared across the group.

    The downsampling conv is 4x4 / pad 1 so every block halves H and W exactly.
    """

    def __init__(self, channels: int, levels: int, rng: np.random.Generator, in_channels: int = 3):
        self.stride = 2 ** levels
        self.blocks = []
        c = in_channels
        widths = backbone_widths(channels, levels)
        widths[-1] = channels
        for w in widths:
            self.blocks.append(Conv2d(c, w, 3, rng, pad=1))
            self.blocks.append(Conv2d(w, w, 4, rng, stride=2, pad=1))
            c = w

    def forward(self, image: Tensor) -> Tensor:
        side = image.shape[-2:]
        if side[0] % self.stride or side[1] % self.stride:
            raise ValueError(f"image extents {side} not divisible by backbone stride {self.stride}")
        x = image
        for conv in self.blocks:
            x = T.relu(conv(x))
        return x


class GLNet(Module):
    def __init__(self, config: ModelConfig):
        config.validate()
        self.config = config
        rng = np.random.default_rng(config.seed)
        c, n = config.channels, config.group_size
        kw = dict(reduction=config.reduction, sa_kernel=config.sa_kernel)
        self.backbone = Backbone(c, config.levels, rng)
        self.gcm = None
        if not config.disable_gcm:
            self.gcm = (GCM2D if config.gcm_use_2d else GCM)(c, n, rng, **kw)
        self.lcm = None
        if not config.disable_lcm:
            self.lcm = LCM(c, n, rng, shared_projection=config.shared_projection, **kw)
        self.gla = None
        if not (config.disable_gcm and config.disable_lcm):
            self.gla = GLA(c, rng, **kw)
        self.aewf = AEWF(c, rng, config.reduction)
        self.decoder = Decoder(c, config.levels, rng)

    def intra_features(self, images: Tensor) -> Tensor:
        return self.backbone(images)

    def inter_features(self, feats: Sequence[Tensor]) -> Tensor:
        """F_ie [N,C,H,W] for the whole group, honouring the ablation flags."""
        n = len(feats)
        G = self.gcm(stack_group(feats)).G if self.gcm is not None else None
        P = self.lcm.all_images(feats) if self.lcm is not None else None
        if G is not None and P is not None:
            return self.gla.all_images(G, P)
        if G is not None:
            return T.stack([self.gla.single_branch(G)] * n, axis=0)
        if P is not None:
            return self.gla.single_branch(T.stack(P, axis=0))
        return T.stack(list(feats), axis=0)

    def forward(self, images: Union[Tensor, Sequence[Tensor]]) -> Tensor:
        """Images [N,3,S,S] -> co-saliency maps [N,1,S,S] in (0,1), input order kept."""
        if not isinstance(images, Tensor):
            images = T.stack(list(images), axis=0)
        n = images.shape[0]
        if n != self.config.group_size:
            raise ValueError(f"model built for groups of {self.config.group_size}, got {n}")
        F_ia = self.intra_features(images)
        feats = T.unstack(F_ia, axis=0)
        F_ie = self.inter_features(feats)
        F_co = self.aewf(F_ia, F_ie)
        return self.decoder(F_co)


def forward_group(images, model: GLNet) -> List[Tensor]:
    return T.unstack(model(images), axis=0)
