"""Central finite-difference checks of the analytic gradients.

Every case builds a toy instance in float64, reduces the output to a scalar
with a fixed random projection, and compares the backward pass against
``(f(x + h) - f(x - h)) / 2h`` on randomly sampled coordinates of every input
and parameter.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Dict, List, Sequence, Tuple

import numpy as np

from . import tensor as T
from .aewf import AEWF, Decoder
from .attention import ChannelAttention, SpatialAttention
from .gcm import GCM, stack_group
from .gla import GLA
from .lcm import PCT, LCMFuse
from .model import Backbone, GLNet, ModelConfig
from .nn import Module
from .tensor import Tensor

F64 = np.float64


@dataclass
class GradCheckResult:
    name: str
    max_rel_error: float
    n_checked: int
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance


def rel_error(analytic, numeric, floor: float = 1e-12) -> float:
    """``|a - n| / max(|a|, |n|)`` on the vectors of sampled coordinates."""
    a, n = np.atleast_1d(np.asarray(analytic, F64)), np.atleast_1d(np.asarray(numeric, F64))
    return float(np.linalg.norm(a - n) / max(np.linalg.norm(a), np.linalg.norm(n), floor))


def check_gradients(loss_fn: Callable[[], Tensor], tensors: Sequence[Tensor], rng: np.random.Generator,
                    samples_per_tensor: int = 6, step: float = 1e-6) -> Tuple[float, int]:
    """Relative error between backward() and central differences.

    The error is measured on the concatenated vector of sampled coordinates
    across all ``tensors``, so near-zero entries whose difference quotient is
    dominated by rounding do not dominate the score.
    ``loss_fn`` must recompute the scalar from the current ``.data`` of ``tensors``.
    """
    for t in tensors:
        t.grad = None
    loss_fn().backward()
    analytic, numeric = [], []
    for t in tensors:
        grad = np.zeros(t.data.size) if t.grad is None else t.grad.reshape(-1)
        flat = t.data.reshape(-1)
        picks = rng.choice(flat.size, size=min(samples_per_tensor, flat.size), replace=False)
        for i in picks:
            orig = flat[i]
            flat[i] = orig + step
            up = loss_fn().item()
            flat[i] = orig - step
            down = loss_fn().item()
            flat[i] = orig
            numeric.append((up - down) / (2 * step))
            analytic.append(grad[i])
    return rel_error(analytic, numeric), len(numeric)


def _uniform(rng, *shape):
    return Tensor(rng.uniform(-1.0, 1.0, size=shape).astype(F64), requires_grad=True)


def _projector(rng, shape):
    weights = Tensor(rng.standard_normal(shape).astype(F64))
    return lambda out: (out * weights).sum()


def _module_case(module: Module, inputs: List[Tensor], fn, rng, out_shape):
    module.astype(F64)
    for p in module.parameters():
        # zero biases put dead channels exactly on a ReLU kink
        if p.ndim == 1:
            p.data[:] = rng.uniform(-0.2, 0.2, size=p.shape)
    project = _projector(rng, out_shape)
    return (lambda: project(fn())), inputs + module.parameters()


# -- cases ------------------------------------------------------------------
# each returns (loss_fn, tensors, step)

def _case_conv2d(rng):
    x, w, b = _uniform(rng, 2, 5, 5), _uniform(rng, 2, 2, 3, 3), _uniform(rng, 2)
    project = _projector(rng, (2, 5, 5))
    return (lambda: project(T.conv2d(x, w, b, 1, 1))), [x, w, b], 1e-3


def _case_conv2d_strided(rng):
    x, w, b = _uniform(rng, 2, 3, 6, 6), _uniform(rng, 3, 3, 4, 4), _uniform(rng, 3)
    project = _projector(rng, (2, 3, 3, 3))
    return (lambda: project(T.conv2d(x, w, b, 2, 1))), [x, w, b], 1e-3


def _case_conv3d(rng):
    x, w, b = _uniform(rng, 2, 3, 4, 4), _uniform(rng, 2, 2, 2, 3, 3), _uniform(rng, 2)
    project = _projector(rng, (2, 2, 4, 4))
    return (lambda: project(T.conv3d(x, w, b, 1))), [x, w, b], 1e-3


def _case_transposed(rng):
    x, w, b = _uniform(rng, 1, 3, 3), _uniform(rng, 1, 2, 4, 4), _uniform(rng, 2)
    project = _projector(rng, (2, 6, 6))
    return (lambda: project(T.transposed_conv2d(x, w, b))), [x, w, b], 1e-3


def _case_matmul(rng):
    a, b = _uniform(rng, 3, 4), _uniform(rng, 4, 2)
    project = _projector(rng, (3, 2))
    return (lambda: project(T.matmul(a, b))), [a, b], 1e-3


def _case_softmax(rng):
    v = _uniform(rng, 7)
    project = _projector(rng, (7,))
    return (lambda: project(T.softmax_vec(v))), [v], 1e-3


def _case_rowmax(rng):
    # well separated entries keep every probe away from a tie
    vals = rng.permutation(12).reshape(3, 4) / 6.0 - 1.0
    a = Tensor(vals.astype(F64), requires_grad=True)
    project = _projector(rng, (3,))
    return (lambda: project(T.rowmax(a))), [a], 1e-3


def _case_ca(rng):
    m = ChannelAttention(8, rng)
    F = _uniform(rng, 8, 4, 4)
    fn, ts = _module_case(m, [F], lambda: m(F), rng, (8, 4, 4))
    return fn, ts, 1e-6


def _case_sa(rng):
    m = SpatialAttention(rng, kernel=3)
    F = _uniform(rng, 3, 5, 5)
    fn, ts = _module_case(m, [F], lambda: m(F), rng, (3, 5, 5))
    return fn, ts, 1e-6


def _case_gcm(rng):
    m = GCM(4, 5, rng, reduction=2, sa_kernel=3)
    feats = [_uniform(rng, 4, 4, 4) for _ in range(5)]
    fn, ts = _module_case(m, feats, lambda: m(stack_group(feats)).G, rng, (4, 4, 4))
    return fn, ts, 1e-6


def _case_pct(rng):
    m = PCT(4, rng, reduction=2, sa_kernel=3)
    Fk, Fj = _uniform(rng, 4, 3, 3), _uniform(rng, 4, 3, 3)
    fn, ts = _module_case(m, [Fk, Fj], lambda: m(Fk, Fj), rng, (4, 3, 3))
    return fn, ts, 1e-6


def _case_lcm_fuse(rng):
    m = LCMFuse(4, 4, rng)
    maps = [_uniform(rng, 4, 4, 4) for _ in range(3)]
    fn, ts = _module_case(m, maps, lambda: m(maps), rng, (4, 4, 4))
    return fn, ts, 1e-6


def _case_gla(rng):
    m = GLA(4, rng, reduction=2, sa_kernel=3)
    G, P = _uniform(rng, 4, 4, 4), _uniform(rng, 4, 4, 4)
    fn, ts = _module_case(m, [G, P], lambda: m(G, P), rng, (4, 4, 4))
    return fn, ts, 1e-6


def _case_aewf(rng):
    m = AEWF(8, rng)
    Fa, Fe = _uniform(rng, 8, 3, 3), _uniform(rng, 8, 3, 3)
    fn, ts = _module_case(m, [Fa, Fe], lambda: m(Fa, Fe), rng, (8, 3, 3))
    return fn, ts, 1e-6


def _case_decoder(rng):
    m = Decoder(16, 2, rng)
    x = _uniform(rng, 16, 3, 3)
    fn, ts = _module_case(m, [x], lambda: m(x), rng, (1, 12, 12))
    return fn, ts, 1e-6


def _case_backbone(rng):
    m = Backbone(8, 2, rng)
    img = Tensor(rng.uniform(0, 1, size=(3, 16, 16)).astype(F64), requires_grad=True)
    fn, ts = _module_case(m, [img], lambda: m(img), rng, (8, 4, 4))
    return fn, ts, 1e-6


def toy_config(**overrides) -> ModelConfig:
    cfg = dict(group_size=3, image_size=16, channels=8, stride=4, reduction=4, sa_kernel=3)
    cfg.update(overrides)
    return ModelConfig(**cfg)


def _case_full(rng):
    m = GLNet(toy_config(seed=int(rng.integers(1 << 30))))
    images = Tensor(rng.uniform(0, 1, size=(3, 3, 16, 16)).astype(F64))
    fn, ts = _module_case(m, [], lambda: m(images), rng, (3, 1, 16, 16))
    return fn, ts, 1e-6


CASES: Dict[str, Callable] = {
    "conv2d": _case_conv2d,
    "conv2d_strided": _case_conv2d_strided,
    "conv3d": _case_conv3d,
    "transposed_conv2d": _case_transposed,
    "matmul": _case_matmul,
    "softmax": _case_softmax,
    "rowmax": _case_rowmax,
    "channel_attention": _case_ca,
    "spatial_attention": _case_sa,
    "gcm": _case_gcm,
    "pct": _case_pct,
    "lcm_fuse": _case_lcm_fuse,
    "gla": _case_gla,
    "aewf": _case_aewf,
    "decoder": _case_decoder,
    "backbone": _case_backbone,
    "full_model": _case_full,
}


def run_case(name: str, seed: int = 0, samples_per_tensor: int = 6, tolerance: float = 1e-3) -> GradCheckResult:
    rng = np.random.default_rng([seed, sorted(CASES).index(name)])
    loss_fn, tensors, step = CASES[name](rng)
    err, n = check_gradients(loss_fn, tensors, rng, samples_per_tensor, step)
    return GradCheckResult(name, err, n, tolerance)


def run_suite(seed: int = 0, names: Sequence[str] = None, **kwargs) -> List[GradCheckResult]:
    return [run_case(name, seed, **kwargs) for name in (names or list(CASES))]
