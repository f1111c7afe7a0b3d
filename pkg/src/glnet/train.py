"""Group BCE loss, AdamW with cosine annealing, and the training loop."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, fields
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from . import tensor as T
from .data import ImageGroup, random_augment
from .model import GLNet
from .nn import Parameter
from .tensor import Tensor

log = logging.getLogger(__name__)

CLAMP = 1e-7


class NonFiniteLoss(FloatingPointError):
    """Training produced a NaN or infinite loss."""


def bce_group_loss(maps: Sequence[Tensor], gts: Sequence, clamp: float = CLAMP) -> Tensor:
    """Mean over the group of the per-pixel binary cross-entropy of each map.

    ``maps`` may be a list of [1,S,S] tensors or one stacked [N,1,S,S] tensor.
    Maps are clamped to ``[clamp, 1 - clamp]`` so the loss stays finite.
    """
    if isinstance(maps, Tensor):
        maps = T.unstack(maps, axis=0)
    if len(maps) != len(gts) or not maps:
        raise ValueError(f"{len(maps)} maps vs {len(gts)} ground truths")
    total = None
    for m, g in zip(maps, gts):
        g = g.data if isinstance(g, Tensor) else np.asarray(g)
        if m.shape != g.shape:
            raise ValueError(f"map {m.shape} and ground truth {g.shape} differ")
        g = Tensor(g.astype(m.dtype))
        m = T.clamp(m, clamp, 1.0 - clamp)
        pix = -(g * T.log(m) + (1.0 - g) * T.log(1.0 - m))
        term = pix.mean()
        total = term if total is None else total + term
    return total * (1.0 / len(maps))


def cosine_lr(step: int, total_steps: int, lr_init: float, lr_min: float) -> float:
    """``lr_min + (lr_init - lr_min)(1 + cos(pi t / T)) / 2`` with ``T = total_steps - 1``.

    The first step uses ``lr_init`` and the last uses ``lr_min``.
    """
    if total_steps <= 1:
        return lr_init
    t = min(max(step, 0), total_steps - 1)
    return lr_min + 0.5 * (lr_init - lr_min) * (1.0 + math.cos(math.pi * t / (total_steps - 1)))


class AdamW:
    """Adam with decoupled weight decay, applied to every parameter."""

    def __init__(self, params: List[Parameter], lr: float = 1e-3, betas=(0.9, 0.999),
                 eps: float = 1e-8, weight_decay: float = 1e-4):
        self.params = list(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            update = (m / c1) / (np.sqrt(v / c2) + self.eps)
            if self.weight_decay:
                p.data *= 1.0 - self.lr * self.weight_decay
            p.data -= (self.lr * update).astype(p.data.dtype)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


@dataclass
class TrainConfig:
    lr_init: float = 1e-3
    lr_min: float = 1e-5
    iterations: int = 600
    batch: int = 1
    weight_decay: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    seed: int = 0
    augment: bool = True
    log_every: int = 1

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.lr_min > self.lr_init:
            raise ValueError("lr_min must not exceed lr_init")
        if self.batch < 1:
            raise ValueError("batch must be >= 1")
        if self.log_every < 1:
            raise ValueError("log_every must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise KeyError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)


# presets: desk scale (trainable backbone) and the lr endpoints used with a pretrained one
PRESETS = {
    "desk": dict(lr_init=1e-3, lr_min=1e-5),
    "pretrained": dict(lr_init=5e-6, lr_min=5e-7),
}


@dataclass
class LogRow:
    step: int
    loss: float
    lr: float


def train_step(model: GLNet, opt: AdamW, batch: Sequence[Tuple[np.ndarray, np.ndarray]]) -> float:
    opt.zero_grad()
    total = 0.0
    for images, masks in batch:
        loss = bce_group_loss(model(Tensor(images)), masks) * (1.0 / len(batch))
        value = float(loss.item())
        if not math.isfinite(value):
            raise NonFiniteLoss(f"non-finite loss {value}")
        loss.backward()
        total += value
    opt.step()
    return total


def train(model: GLNet, data: Sequence[ImageGroup], cfg: TrainConfig,
          callback: Optional[Callable[[LogRow], None]] = None) -> List[LogRow]:
    """Run ``cfg.iterations`` steps; returns the loss log (every ``log_every`` steps)."""
    if not data:
        raise ValueError("training set is empty")
    n = model.config.group_size
    for g in data:
        if g.masks is None:
            raise ValueError(f"group {g.name} has no ground truth")
        if len(g) < n:
            raise ValueError(f"group {g.name} has {len(g)} images, model needs {n}")
    rng = np.random.default_rng(cfg.seed)
    opt = AdamW(model.parameters(), cfg.lr_init, (cfg.beta1, cfg.beta2), weight_decay=cfg.weight_decay)
    rows = []
    for step in range(cfg.iterations):
        opt.lr = cosine_lr(step, cfg.iterations, cfg.lr_init, cfg.lr_min)
        batch = []
        for _ in range(cfg.batch):
            group = data[rng.integers(len(data))]
            pick = np.sort(rng.choice(len(group), size=n, replace=False))
            images, masks = group.images[pick], group.masks[pick]
            if cfg.augment:
                images, masks = random_augment(rng, images, masks)
            batch.append((images.astype(np.float32), masks.astype(np.float32)))
        try:
            loss = train_step(model, opt, batch)
        except FloatingPointError as exc:
            raise NonFiniteLoss(f"step {step}: {exc}") from exc
        if step % cfg.log_every == 0 or step == cfg.iterations - 1:
            row = LogRow(step, loss, opt.lr)
            rows.append(row)
            if callback is not None:
                callback(row)
    return rows


def write_loss_log(path, rows: Sequence[LogRow]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "loss", "lr"])
        for r in rows:
            w.writerow([r.step, repr(r.loss), repr(r.lr)])


def predict_group(model: GLNet, images: np.ndarray) -> np.ndarray:
    """Maps [M,1,S,S] for a group of any size M >= 2.

    Groups larger than the model's N are processed in chunks of N; the last
    chunk and groups smaller than N borrow members cyclically to fill the slots,
    and only each image's own prediction is kept.
    """
    n = model.config.group_size
    m = len(images)
    if m < 2:
        raise ValueError("a group needs at least 2 images")
    out = np.empty((m, 1) + images.shape[2:], dtype=np.float32)
    for start in range(0, m, n):
        idx = [(start + i) % m for i in range(n)]
        maps = model(Tensor(images[idx].astype(np.float32))).data
        keep = min(n, m - start)
        out[start:start + keep] = maps[:keep]
    return out
