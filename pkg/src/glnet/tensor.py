"""Dense float tensors with reverse-mode automatic differentiation.

Every differentiable operation produces a new :class:`Tensor` that remembers
its parents and a closure mapping the output gradient to input gradients.
:meth:`Tensor.backward` walks the recorded graph in reverse topological order.

Float32 is the working precision. Float64 arrays are kept as float64 so the
finite-difference checks can run the very same code paths at higher precision.
"""
from __future__ import annotations

from typing import Callable, Optional, Sequence, Tuple, Union

import numpy as np

DTYPE = np.float32

ArrayLike = Union["Tensor", np.ndarray, float, int]

# Multiplies every gradient delivered to a leaf; only the fault-injection
# path of the gradient checker ever changes it.
_leaf_grad_scale = 1.0


def set_leaf_grad_scale(scale: float) -> None:
    global _leaf_grad_scale
    _leaf_grad_scale = float(scale)


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False):
        if isinstance(data, Tensor):
            data = data.data
        if isinstance(data, (np.ndarray, np.floating)) and data.dtype in (np.float32, np.float64):
            arr = np.asarray(data)
        else:
            arr = np.asarray(data, dtype=DTYPE)
        self.data: np.ndarray = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._parents: Tuple[Tensor, ...] = ()
        self._backward: Optional[Callable] = None
        self.op = ""

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __len__(self):
        return self.shape[0]

    # -- autograd ---------------------------------------------------------
    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into ``.grad`` of every reachable leaf."""
        if self.data.size != 1:
            raise ValueError(f"backward() needs a scalar, got shape {self.shape}")
        if not self.requires_grad:
            raise RuntimeError("backward() on a tensor with no recorded forward graph")
        order = _topological_order(self)
        grads = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if _leaf_grad_scale != 1.0:
                    g = g * _leaf_grad_scale
                if node.grad is None:
                    node.grad = np.array(g, dtype=node.data.dtype)
                else:
                    node.grad += g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    # -- operators --------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)

    @property
    def T(self):
        return transpose(self, None)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def max(self, axis=-1, keepdims=False):
        return amax(self, axis, keepdims)


def _topological_order(root: Tensor) -> list:
    """The tape: every node appears after all nodes producing its inputs."""
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def as_tensor(x: ArrayLike, like: Optional[Tensor] = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    if like is not None:
        return Tensor(np.asarray(x, dtype=like.dtype))
    return Tensor(x)


def _result(data: np.ndarray, parents: Sequence[Tensor], backward: Callable, op: str) -> Tensor:
    if not np.isfinite(data).all():
        raise FloatingPointError(f"non-finite values produced by {op}")
    out = Tensor(data)
    out.op = op
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# ---------------------------------------------------------------------------
# pointwise
# ---------------------------------------------------------------------------
def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = _pair(a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _result(a.data + b.data, (a, b), backward, "add")


def sub(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = _pair(a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _result(a.data - b.data, (a, b), backward, "sub")


def mul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = _pair(a, b)

    def backward(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _result(a.data * b.data, (a, b), backward, "mul")


def div(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = _pair(a, b)
    out = a.data / b.data

    def backward(g):
        ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _result(out, (a, b), backward, "div")


def _pair(a: ArrayLike, b: ArrayLike) -> Tuple[Tensor, Tensor]:
    if isinstance(a, Tensor):
        return a, as_tensor(b, like=a)
    b = as_tensor(b)
    return as_tensor(a, like=b), b


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0

    def backward(g):
        return (g * mask,)

    return _result(x.data * mask, (x,), backward, "relu")


def sigmoid(x: Tensor) -> Tensor:
    # tanh form never overflows
    out = 0.5 * (np.tanh(0.5 * x.data) + 1.0)
    out = out.astype(x.dtype, copy=False)

    def backward(g):
        return (g * out * (1.0 - out),)

    return _result(out, (x,), backward, "sigmoid")


def log(x: Tensor) -> Tensor:
    if np.any(x.data <= 0):
        raise FloatingPointError("log of a non-positive value")

    def backward(g):
        return (g / x.data,)

    return _result(np.log(x.data), (x,), backward, "log")


def clamp(x: Tensor, lo: float, hi: float) -> Tensor:
    """Clip to [lo, hi]; the gradient is zero where clipping was active."""
    out = np.clip(x.data, lo, hi)
    inside = (x.data >= lo) & (x.data <= hi)

    def backward(g):
        return (g * inside,)

    return _result(out, (x,), backward, "clamp")


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------
def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def sum_(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, x.ndim)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _result(x.data.sum(axis=axes, keepdims=keepdims), (x,), backward, "sum")


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, x.ndim)
    count = int(np.prod([x.shape[a] for a in axes]))

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / count, x.shape).copy(),)

    return _result(x.data.mean(axis=axes, keepdims=keepdims), (x,), backward, "mean")


def amax(x: Tensor, axis: int = -1, keepdims: bool = False) -> Tensor:
    """Maximum along one axis.

    The backward pass routes the whole gradient to the first maximal index,
    so ties are broken deterministically.
    """
    axis = axis % x.ndim
    idx = np.expand_dims(np.argmax(x.data, axis=axis), axis)
    out = np.take_along_axis(x.data, idx, axis=axis)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        gx = np.zeros_like(x.data)
        np.put_along_axis(gx, idx, g, axis=axis)
        return (gx,)

    if not keepdims:
        out = np.squeeze(out, axis)
    return _result(out, (x,), backward, "max")


def rowmax(a: Tensor) -> Tensor:
    """Row-wise maximum of a matrix, ``out[i] = max_j a[i, j]``."""
    if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
        raise ValueError(f"rowmax expects a non-empty matrix, got shape {a.shape}")
    return amax(a, axis=1)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    axis = axis % x.ndim
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _result(out, (x,), backward, "softmax")


def softmax_vec(v: Tensor) -> Tensor:
    if v.ndim != 1 or v.shape[0] == 0:
        raise ValueError(f"softmax_vec expects a non-empty vector, got shape {v.shape}")
    return softmax(v, axis=0)


# ---------------------------------------------------------------------------
# shape manipulation
# ---------------------------------------------------------------------------
def reshape(x: Tensor, shape) -> Tensor:
    def backward(g):
        return (g.reshape(x.shape),)

    return _result(x.data.reshape(shape), (x,), backward, "reshape")


def transpose(x: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))

    def backward(g):
        return (g.transpose(inverse),)

    return _result(x.data.transpose(axes), (x,), backward, "transpose")


def getitem(x: Tensor, index) -> Tensor:
    def backward(g):
        gx = np.zeros_like(x.data)
        if _fancy(index):
            np.add.at(gx, index, g)
        else:
            gx[index] = g
        return (gx,)

    return _result(x.data[index], (x,), backward, "getitem")


def _fancy(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    axis = axis % tensors[0].ndim
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    data = np.concatenate([t.data for t in tensors], axis=axis)
    return _result(data, tensors, backward, "concat")


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise ValueError("stack of an empty list")
    shape = tensors[0].shape
    for t in tensors[1:]:
        if t.shape != shape:
            raise ValueError(f"stack shape mismatch: {t.shape} vs {shape}")
    axis = axis % (len(shape) + 1)

    def backward(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    data = np.stack([t.data for t in tensors], axis=axis)
    return _result(data, tensors, backward, "stack")


def unstack(x: Tensor, axis: int = 0) -> list:
    axis = axis % x.ndim
    index = [slice(None)] * x.ndim
    out = []
    for i in range(x.shape[axis]):
        index[axis] = i
        out.append(getitem(x, tuple(index)))
    return out


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------
def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; leading axes, when present, are batch axes."""
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul needs operands of rank >= 2")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul inner extents differ: {a.shape} @ {b.shape}")

    def backward(g):
        ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape) if a.requires_grad else None
        gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape) if b.requires_grad else None
        return ga, gb

    return _result(a.data @ b.data, (a, b), backward, "matmul")


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------
def _gather(src: np.ndarray, ksize, stride, osize) -> np.ndarray:
    """im2col on a channel-major [C, B, *S] array -> [*K, C, B, *O]."""
    cols = np.empty(tuple(ksize) + src.shape[:2] + tuple(osize), dtype=src.dtype)
    for k in np.ndindex(*ksize):
        cols[k] = src[(slice(None), slice(None)) + _tap(k, stride, osize)]
    return cols


def _scatter(cols: np.ndarray, shape, stride) -> np.ndarray:
    """Adjoint of :func:`_gather`: sum [*K, C, B, *O] taps into a zero [C, B, *S]."""
    nd = len(stride)
    ksize, osize = cols.shape[:nd], cols.shape[nd + 2:]
    out = np.zeros(shape, dtype=cols.dtype)
    for k in np.ndindex(*ksize):
        out[(slice(None), slice(None)) + _tap(k, stride, osize)] += cols[k]
    return out


def _tap(k, stride, osize):
    return tuple(slice(ki, ki + s * (o - 1) + 1, s) for ki, s, o in zip(k, stride, osize))


def _to_channel_major(x: np.ndarray) -> np.ndarray:
    return x.swapaxes(0, 1)


def _convnd(x: Tensor, w: Tensor, bias: Optional[Tensor], stride, pad, op: str) -> Tensor:
    nd = w.ndim - 2
    if x.ndim not in (nd + 1, nd + 2):
        raise ValueError(f"{op}: input rank {x.ndim} incompatible with kernel rank {w.ndim}")
    batched = x.ndim == nd + 2
    xd = x.data if batched else x.data[None]
    B, cin = xd.shape[:2]
    cout = w.shape[0]
    if w.shape[1] != cin:
        raise ValueError(f"{op}: input has {cin} channels, kernel expects {w.shape[1]}")
    if bias is not None and bias.shape != (cout,):
        raise ValueError(f"{op}: bias shape {bias.shape} != ({cout},)")
    ksize = w.shape[2:]
    osize = []
    for n, k, p, s in zip(xd.shape[2:], ksize, pad, stride):
        span = n + 2 * p - k
        if span < 0:
            raise ValueError(f"{op}: kernel {ksize} larger than padded input {xd.shape[2:]}")
        if span % s:
            raise ValueError(f"{op}: output extent ({n}+2*{p}-{k})/{s}+1 is not integral")
        osize.append(span // s + 1)
    pad_width = ((0, 0), (0, 0)) + tuple((p, p) for p in pad)
    xp = np.pad(xd, pad_width) if any(pad) else xd
    cols = _gather(_to_channel_major(xp), ksize, stride, osize).reshape(-1, B * int(np.prod(osize)))
    # [C_out, *K, C_in] rows match the [*K, C_in] row order of cols
    wmat = np.moveaxis(w.data, 1, -1).reshape(cout, -1)
    out = (wmat @ cols).reshape((cout, B) + tuple(osize))
    if bias is not None:
        out += bias.data.reshape((-1, 1) + (1,) * nd)
    out = np.ascontiguousarray(_to_channel_major(out))

    def backward(g):
        gb = g if batched else g[None]
        gmat = np.ascontiguousarray(_to_channel_major(gb)).reshape(cout, -1)
        gx = gw = gbias = None
        if w.requires_grad:
            gw = np.moveaxis((gmat @ cols.T).reshape((cout,) + tuple(ksize) + (cin,)), -1, 1)
        if bias is not None and bias.requires_grad:
            gbias = gmat.sum(axis=1)
        if x.requires_grad:
            dcols = (wmat.T @ gmat).reshape(tuple(ksize) + (cin, B) + tuple(osize))
            gxp = _scatter(dcols, (cin, B) + xp.shape[2:], stride)
            crop = (slice(None), slice(None)) + tuple(slice(p, n - p) for p, n in zip(pad, xp.shape[2:]))
            gx = np.ascontiguousarray(_to_channel_major(gxp[crop]))
            if not batched:
                gx = gx[0]
        return (gx, gw) if bias is None else (gx, gw, gbias)

    if not batched:
        out = out[0]
    parents = (x, w) if bias is None else (x, w, bias)
    return _result(out, parents, backward, op)


def conv2d(x: Tensor, w: Tensor, bias: Optional[Tensor] = None, stride: int = 1, pad: int = 0) -> Tensor:
    """2D cross-correlation of x [C_in,H,W] (or [B,C_in,H,W]) with w [C_out,C_in,kh,kw]."""
    if w.ndim != 4:
        raise ValueError(f"conv2d kernel must be rank 4, got {w.shape}")
    if stride < 1 or pad < 0:
        raise ValueError("conv2d needs stride >= 1 and pad >= 0")
    return _convnd(x, w, bias, (stride, stride), (pad, pad), "conv2d")


def conv3d(x: Tensor, w: Tensor, bias: Optional[Tensor] = None, spatial_pad: int = 0) -> Tensor:
    """3D cross-correlation of x [C_in,D,H,W] (or batched) with w [C_out,C_in,kd,kh,kw].

    The depth axis is never padded, so the output depth is ``D - kd + 1``.
    """
    if w.ndim != 5:
        raise ValueError(f"conv3d kernel must be rank 5, got {w.shape}")
    depth = x.shape[-3]
    if w.shape[2] > depth:
        raise ValueError(f"conv3d kernel depth {w.shape[2]} exceeds input depth {depth}")
    return _convnd(x, w, bias, (1, 1, 1), (0, spatial_pad, spatial_pad), "conv3d")


def conv_transpose2d(x: Tensor, w: Tensor, bias: Optional[Tensor] = None, stride: int = 2, pad: int = 1) -> Tensor:
    """Transposed 2D convolution, w laid out as [C_in, C_out, kh, kw].

    Output extent is ``(H - 1) * stride - 2 * pad + kh``; the decoder's
    4x4 / stride 2 / pad 1 setting exactly doubles H and W.
    """
    if w.ndim != 4:
        raise ValueError(f"conv_transpose2d kernel must be rank 4, got {w.shape}")
    if x.ndim not in (3, 4):
        raise ValueError(f"conv_transpose2d expects rank 3 or 4 input, got {x.shape}")
    batched = x.ndim == 4
    xd = x.data if batched else x.data[None]
    B, cin, H, W = xd.shape
    cout, kh, kw = w.shape[1:]
    if cin != w.shape[0]:
        raise ValueError(f"conv_transpose2d: input has {cin} channels, kernel expects {w.shape[0]}")
    if bias is not None and bias.shape != (cout,):
        raise ValueError(f"conv_transpose2d: bias shape {bias.shape} != ({cout},)")
    full = ((H - 1) * stride + kh, (W - 1) * stride + kw)
    if full[0] - 2 * pad < 1 or full[1] - 2 * pad < 1:
        raise ValueError("conv_transpose2d: padding removes the whole output")
    xmat = np.ascontiguousarray(_to_channel_major(xd)).reshape(cin, -1)
    # [kh, kw, C_out, C_in] rows match the gather order [*K, C]
    wmat = w.data.transpose(2, 3, 1, 0).reshape(-1, cin)
    cols = (wmat @ xmat).reshape((kh, kw, cout, B, H, W))
    outp = _scatter(cols, (cout, B) + full, (stride, stride))
    out = outp[:, :, pad:full[0] - pad, pad:full[1] - pad]
    if bias is not None:
        out = out + bias.data.reshape(-1, 1, 1, 1)
    out = np.ascontiguousarray(_to_channel_major(out))

    def backward(g):
        gb = g if batched else g[None]
        gcm = _to_channel_major(gb)
        gp = np.pad(gcm, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else gcm
        gcols = _gather(gp, (kh, kw), (stride, stride), (H, W)).reshape(-1, B * H * W)
        gx = gw = gbias = None
        if x.requires_grad:
            gx = np.ascontiguousarray(_to_channel_major((wmat.T @ gcols).reshape(cin, B, H, W)))
            if not batched:
                gx = gx[0]
        if w.requires_grad:
            gw = (gcols @ xmat.T).reshape(kh, kw, cout, cin).transpose(3, 2, 0, 1)
        if bias is not None and bias.requires_grad:
            gbias = gb.sum(axis=(0, 2, 3))
        return (gx, gw) if bias is None else (gx, gw, gbias)

    if not batched:
        out = out[0]
    parents = (x, w) if bias is None else (x, w, bias)
    return _result(out, parents, backward, "conv_transpose2d")


def transposed_conv2d(x: Tensor, w: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """Decoder upsampling: 4x4 kernel, stride 2, pad 1, output [C_out, 2H, 2W]."""
    if w.shape[2:] != (4, 4):
        raise ValueError(f"decoder transposed conv expects a 4x4 kernel, got {w.shape[2:]}")
    return conv_transpose2d(x, w, bias, stride=2, pad=1)
