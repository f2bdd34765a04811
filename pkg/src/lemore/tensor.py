"""Dense float64 tensors and the primitive operations everything else uses.

Layout is channel-height-width, row-major (decision D2 analog: batches are
handled by looping at the model level, never inside kernels). All operations
are pure: they return new tensors and leave their inputs untouched. When an
autodiff tape is active, each operation records its backward rule onto it.
"""

from __future__ import annotations

from functools import lru_cache
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from . import autodiff
from .errors import InvalidArgumentError, ShapeError

ArrayLike = Union[np.ndarray, Sequence, float, int]


class Tensor:
    """Dense N-dimensional value, rank 1 to 4, 64-bit floats, row-major.

    ``grad_id`` is the handle linking this value into the autodiff tape it
    was last recorded on; it is None for values never touched by a tape.
    """

    __slots__ = ("data", "grad_id", "_tape")

    def __init__(self, data: ArrayLike):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        if not 1 <= arr.ndim <= 4:
            raise ShapeError(f"rank must be 1..4, got {arr.ndim}")
        if arr.size == 0:
            raise ShapeError("all shape entries must be >= 1")
        self.data = np.ascontiguousarray(arr)
        self.grad_id: Optional[int] = None
        self._tape = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def rank(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def copy(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape})"


def _emit(op: str, out_data: np.ndarray, inputs: tuple, backward) -> Tensor:
    """Wrap a raw result; record the op if a tape is active."""
    out = Tensor(out_data)
    tape = autodiff.active_tape()
    if tape is not None:
        tape.record(op, inputs, out, backward)
    return out


# ---------------------------------------------------------------------------
# shape movement

def permute(t: Tensor, axes: Iterable[int]) -> Tensor:
    """Reorder axes; inverse permutation recovers the input bit-exactly."""
    axes = tuple(int(a) for a in axes)
    if sorted(axes) != list(range(t.rank)):
        raise InvalidArgumentError(
            f"axes {axes} is not a permutation of 0..{t.rank - 1}")
    out_data = np.ascontiguousarray(np.transpose(t.data, axes))
    inverse = tuple(np.argsort(axes))

    def backward(g):
        return (np.ascontiguousarray(np.transpose(g, inverse)),)

    return _emit("permute", out_data, (t,), backward)


def reshape(t: Tensor, shape: Iterable[int]) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape)) != t.size:
        raise ShapeError(f"cannot reshape {t.shape} to {shape}")
    in_shape = t.shape

    def backward(g):
        return (g.reshape(in_shape),)

    return _emit("reshape", t.data.reshape(shape), (t,), backward)


# ---------------------------------------------------------------------------
# linear algebra

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Standard rank-2 matrix product."""
    if a.rank != 2 or b.rank != 2:
        raise ShapeError(f"matmul needs rank-2 operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"inner dimensions differ: {a.shape} vs {b.shape}")
    ad, bd = a.data, b.data

    def backward(g):
        return g @ bd.T, ad.T @ g

    return _emit("matmul", ad @ bd, (a, b), backward)


# ---------------------------------------------------------------------------
# elementwise

def _broadcast_check(xs: tuple, ys: tuple) -> None:
    # legal: identical shapes, or a per-channel (C,1,1) gate against (C,H,W)
    if xs == ys:
        return
    if len(xs) == 3 and len(ys) == 3 and xs[0] == ys[0]:
        if xs[1:] == (1, 1) or ys[1:] == (1, 1):
            return
    raise ShapeError(f"shapes {xs} and {ys} are not broadcast-compatible")


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    return g.sum(axis=(1, 2), keepdims=True)


def add(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_check(a.shape, b.shape)
    a_shape, b_shape = a.shape, b.shape

    def backward(g):
        return _unbroadcast(g, a_shape), _unbroadcast(g, b_shape)

    return _emit("add", a.data + b.data, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_check(a.shape, b.shape)
    ad, bd = a.data, b.data

    def backward(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return _emit("mul", ad * bd, (a, b), backward)


def scale(t: Tensor, s: float) -> Tensor:
    s = float(s)

    def backward(g):
        return (g * s,)

    return _emit("scale", t.data * s, (t,), backward)


def relu(t: Tensor) -> Tensor:
    mask = t.data > 0.0  # relu'(0) = 0

    def backward(g):
        return (g * mask,)

    return _emit("relu", np.where(mask, t.data, 0.0), (t,), backward)


def sigmoid(t: Tensor) -> Tensor:
    x = t.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)

    def backward(g):
        return (g * out * (1.0 - out),)

    return _emit("sigmoid", out, (t,), backward)


def elementwise(t: Tensor, kind: str, other: Union[Tensor, float, None] = None) -> Tensor:
    """Dispatch by name; binary kinds take ``other``."""
    if kind == "relu":
        return relu(t)
    if kind == "sigmoid":
        return sigmoid(t)
    if kind == "add":
        return add(t, other)
    if kind == "mul":
        return mul(t, other)
    if kind == "scale":
        return scale(t, other)
    raise InvalidArgumentError(f"unknown elementwise kind {kind!r}")


# ---------------------------------------------------------------------------
# reductions

def sum_all(t: Tensor) -> Tensor:
    in_shape = t.shape

    def backward(g):
        return (np.full(in_shape, g.reshape(-1)[0]),)

    return _emit("sum_all", np.asarray([t.data.sum()]), (t,), backward)


def mean_all(t: Tensor) -> Tensor:
    n = t.size
    in_shape = t.shape

    def backward(g):
        return (np.full(in_shape, g.reshape(-1)[0] / n),)

    return _emit("mean_all", np.asarray([t.data.mean()]), (t,), backward)


def softmax_rows(t: Tensor) -> Tensor:
    """Row softmax of a rank-2 tensor, max-subtracted for stability."""
    if t.rank != 2:
        raise ShapeError(f"softmax_rows needs rank 2, got {t.shape}")
    z = t.data - t.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=1, keepdims=True)

    def backward(g):
        dot = (g * out).sum(axis=1, keepdims=True)
        return (out * (g - dot),)

    return _emit("softmax_rows", out, (t,), backward)


# ---------------------------------------------------------------------------
# spatial resampling

def global_avg_pool(t: Tensor) -> Tensor:
    """Mean over the spatial extent of a C,H,W map, kept as C,1,1."""
    if t.rank != 3:
        raise ShapeError(f"global_avg_pool needs rank 3, got {t.shape}")
    _, h, w = t.shape
    n = h * w

    def backward(g):
        return (np.broadcast_to(g / n, (t.shape[0], h, w)).copy(),)

    return _emit("global_avg_pool", t.data.mean(axis=(1, 2), keepdims=True),
                 (t,), backward)


@lru_cache(maxsize=256)
def _interp_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Bilinear interpolation weights along one axis, align-corners-false:
    source coordinate = (dst + 0.5) * n_in / n_out - 0.5, clamped."""
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1.0)
    i0 = np.floor(src).astype(np.int64)
    frac = src - i0
    i1 = np.minimum(i0 + 1, n_in - 1)
    m = np.zeros((n_out, n_in))
    rows = np.arange(n_out)
    np.add.at(m, (rows, i0), 1.0 - frac)
    np.add.at(m, (rows, i1), frac)
    m.setflags(write=False)
    return m


@lru_cache(maxsize=256)
def _pool_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Adaptive-average weights: contiguous nearly-equal bins that partition
    the input (bin i covers [i*n_in//n_out, (i+1)*n_in//n_out))."""
    m = np.zeros((n_out, n_in))
    for i in range(n_out):
        a = i * n_in // n_out
        b = (i + 1) * n_in // n_out
        m[i, a:b] = 1.0 / (b - a)
    m.setflags(write=False)
    return m


def _apply_axis_maps(x: np.ndarray, my: np.ndarray, mx: np.ndarray) -> np.ndarray:
    # y[c, o, p] = sum_{h, w} my[o, h] * x[c, h, w] * mx[p, w]
    t1 = np.tensordot(my, x, axes=(1, 1))          # (out_h, C, W)
    t2 = np.tensordot(t1, mx, axes=(2, 1))         # (out_h, C, out_w)
    return np.ascontiguousarray(t2.transpose(1, 0, 2))


def bilinear_upsample(t: Tensor, out_h: int, out_w: int) -> Tensor:
    """Resize a C,H,W map up to out_h x out_w (exact identity when equal)."""
    if t.rank != 3:
        raise ShapeError(f"bilinear_upsample needs rank 3, got {t.shape}")
    out_h, out_w = int(out_h), int(out_w)
    if out_h < 1 or out_w < 1:
        raise InvalidArgumentError("target size must be positive")
    _, h, w = t.shape
    if out_h < h or out_w < w:
        raise InvalidArgumentError(
            f"target {out_h}x{out_w} is smaller than source {h}x{w}")
    my = _interp_matrix(h, out_h)
    mx = _interp_matrix(w, out_w)

    def backward(g):
        return (_apply_axis_maps(g, my.T, mx.T),)

    return _emit("bilinear_upsample", _apply_axis_maps(t.data, my, mx),
                 (t,), backward)


def avg_pool_to_grid(t: Tensor, gh: int, gw: int) -> Tensor:
    """Adaptive average pooling of a C,H,W map onto a gh x gw grid."""
    if t.rank != 3:
        raise ShapeError(f"avg_pool_to_grid needs rank 3, got {t.shape}")
    gh, gw = int(gh), int(gw)
    _, h, w = t.shape
    if gh < 1 or gw < 1:
        raise InvalidArgumentError("grid must be positive")
    if gh > h or gw > w:
        raise InvalidArgumentError(f"grid {gh}x{gw} exceeds input {h}x{w}")
    my = _pool_matrix(h, gh)
    mx = _pool_matrix(w, gw)

    def backward(g):
        return (_apply_axis_maps(g, my.T, mx.T),)

    return _emit("avg_pool_to_grid", _apply_axis_maps(t.data, my, mx),
                 (t,), backward)
