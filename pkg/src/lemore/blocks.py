"""Parameterized layers: pointwise and depthwise convolutions, batch
normalization, channel attention, and the two-times-expansion feed-forward
network.

Every layer exposes ``state()`` yielding (name, tensor, trainable, decay)
tuples; the model assembles these into its registry. Convolutions followed
by batch normalization are created bias-free.
"""

from __future__ import annotations

import math
from typing import Iterator, Optional, Tuple

import numpy as np

from . import tensor as T
from .errors import ShapeError
from .tensor import Tensor

StateItem = Tuple[str, Tensor, bool, bool]


def he_uniform(rng: np.random.Generator, shape: tuple, fan_in: int) -> Tensor:
    bound = math.sqrt(6.0 / fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape))


# ---------------------------------------------------------------------------
# pointwise convolution

class Conv1x1:
    """1x1 convolution: a channel-mixing matrix applied at every position."""

    def __init__(self, weight: Tensor, bias: Optional[Tensor] = None):
        if weight.rank != 2:
            raise ShapeError("Conv1x1 weight must be out_channels x in_channels")
        if bias is not None and bias.shape != (weight.shape[0],):
            raise ShapeError("bias length must equal out_channels")
        self.weight = weight
        self.bias = bias

    @classmethod
    def create(cls, rng: np.random.Generator, in_ch: int, out_ch: int,
               bias: bool = True) -> "Conv1x1":
        w = he_uniform(rng, (out_ch, in_ch), fan_in=in_ch)
        b = Tensor(np.zeros(out_ch)) if bias else None
        return cls(w, b)

    @property
    def in_channels(self) -> int:
        return self.weight.shape[1]

    @property
    def out_channels(self) -> int:
        return self.weight.shape[0]

    def state(self) -> Iterator[StateItem]:
        yield "weight", self.weight, True, True
        if self.bias is not None:
            yield "bias", self.bias, True, False

    def __call__(self, x: Tensor) -> Tensor:
        return conv1x1_forward(self, x)


def conv1x1_forward(layer: Conv1x1, x: Tensor) -> Tensor:
    if x.rank != 3:
        raise ShapeError(f"conv1x1 input must be C,H,W, got {x.shape}")
    if x.shape[0] != layer.in_channels:
        raise ShapeError(
            f"conv1x1 expects {layer.in_channels} channels, got {x.shape[0]}")
    w, b = layer.weight, layer.bias
    wd = w.data
    xd = x.data
    out = np.tensordot(wd, xd, axes=(1, 0))
    inputs = [x, w]
    if b is not None:
        out = out + b.data[:, None, None]
        inputs.append(b)

    def backward(g):
        gx = np.tensordot(wd.T, g, axes=(1, 0))
        gw = np.tensordot(g.reshape(g.shape[0], -1),
                          xd.reshape(xd.shape[0], -1).T, axes=(1, 0))
        if b is None:
            return gx, gw
        return gx, gw, g.sum(axis=(1, 2))

    return T._emit("conv1x1", out, tuple(inputs), backward)


# ---------------------------------------------------------------------------
# 3x3 convolutions

def _conv_out_len(n: int, pad: int, dilation: int, stride: int) -> int:
    eff = dilation * 2 + 1  # 3-tap kernel
    return (n + 2 * pad - eff) // stride + 1


class Conv3x3:
    """Full 3x3 convolution (used by the stem only)."""

    def __init__(self, weight: Tensor, bias: Optional[Tensor] = None,
                 stride: int = 1):
        if weight.rank != 4 or weight.shape[2:] != (3, 3):
            raise ShapeError("Conv3x3 weight must be out x in x 3 x 3")
        self.weight = weight
        self.bias = bias
        self.stride = int(stride)

    @classmethod
    def create(cls, rng: np.random.Generator, in_ch: int, out_ch: int,
               stride: int = 1, bias: bool = True) -> "Conv3x3":
        w = he_uniform(rng, (out_ch, in_ch, 3, 3), fan_in=in_ch * 9)
        b = Tensor(np.zeros(out_ch)) if bias else None
        return cls(w, b, stride)

    @property
    def in_channels(self) -> int:
        return self.weight.shape[1]

    @property
    def out_channels(self) -> int:
        return self.weight.shape[0]

    def state(self) -> Iterator[StateItem]:
        yield "weight", self.weight, True, True
        if self.bias is not None:
            yield "bias", self.bias, True, False

    def __call__(self, x: Tensor) -> Tensor:
        return conv3x3_forward(self, x)


def conv3x3_forward(layer: Conv3x3, x: Tensor) -> Tensor:
    if x.rank != 3:
        raise ShapeError(f"conv3x3 input must be C,H,W, got {x.shape}")
    if x.shape[0] != layer.in_channels:
        raise ShapeError(
            f"conv3x3 expects {layer.in_channels} channels, got {x.shape[0]}")
    s = layer.stride
    _, h, w = x.shape
    ho = _conv_out_len(h, 1, 1, s)
    wo = _conv_out_len(w, 1, 1, s)
    xp = np.pad(x.data, ((0, 0), (1, 1), (1, 1)))
    cin = x.shape[0]
    cols = np.empty((cin, 3, 3, ho, wo))
    for ki in range(3):
        for kj in range(3):
            cols[:, ki, kj] = xp[:, ki:ki + s * (ho - 1) + 1:s,
                                 kj:kj + s * (wo - 1) + 1:s]
    wd = layer.weight.data
    out = np.tensordot(wd, cols, axes=([1, 2, 3], [0, 1, 2]))
    inputs = [x, layer.weight]
    if layer.bias is not None:
        out = out + layer.bias.data[:, None, None]
        inputs.append(layer.bias)

    def backward(g):
        gw = np.tensordot(g, cols, axes=([1, 2], [3, 4]))
        gxp = np.zeros_like(xp)
        for ki in range(3):
            for kj in range(3):
                gxp[:, ki:ki + s * (ho - 1) + 1:s, kj:kj + s * (wo - 1) + 1:s] += \
                    np.tensordot(wd[:, :, ki, kj], g, axes=(0, 0))
        gx = gxp[:, 1:1 + h, 1:1 + w]
        if layer.bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=(1, 2))

    return T._emit("conv3x3", out, tuple(inputs), backward)


class DepthwiseConv3x3:
    """Per-channel 3x3 correlation; padding equals dilation so stride-1
    output keeps the input size."""

    def __init__(self, weight: Tensor, bias: Optional[Tensor] = None,
                 dilation: int = 1, stride: int = 1):
        if weight.rank != 3 or weight.shape[1:] != (3, 3):
            raise ShapeError("depthwise weight must be channels x 3 x 3")
        self.weight = weight
        self.bias = bias
        self.dilation = int(dilation)
        self.stride = int(stride)

    @classmethod
    def create(cls, rng: np.random.Generator, channels: int, dilation: int = 1,
               stride: int = 1, bias: bool = True) -> "DepthwiseConv3x3":
        w = he_uniform(rng, (channels, 3, 3), fan_in=9)
        b = Tensor(np.zeros(channels)) if bias else None
        return cls(w, b, dilation, stride)

    @property
    def channels(self) -> int:
        return self.weight.shape[0]

    def state(self) -> Iterator[StateItem]:
        yield "weight", self.weight, True, True
        if self.bias is not None:
            yield "bias", self.bias, True, False

    def __call__(self, x: Tensor) -> Tensor:
        return dwconv_forward(self, x)


def dwconv_forward(layer: DepthwiseConv3x3, x: Tensor) -> Tensor:
    if x.rank != 3:
        raise ShapeError(f"depthwise input must be C,H,W, got {x.shape}")
    if x.shape[0] != layer.channels:
        raise ShapeError(
            f"depthwise expects {layer.channels} channels, got {x.shape[0]}")
    d, s = layer.dilation, layer.stride
    _, h, w = x.shape
    ho = _conv_out_len(h, d, d, s)
    wo = _conv_out_len(w, d, d, s)
    xp = np.pad(x.data, ((0, 0), (d, d), (d, d)))
    wd = layer.weight.data
    out = np.zeros((x.shape[0], ho, wo))
    for ki in range(3):
        for kj in range(3):
            i0, j0 = ki * d, kj * d
            out += wd[:, ki, kj][:, None, None] * \
                xp[:, i0:i0 + s * (ho - 1) + 1:s, j0:j0 + s * (wo - 1) + 1:s]
    inputs = [x, layer.weight]
    if layer.bias is not None:
        out = out + layer.bias.data[:, None, None]
        inputs.append(layer.bias)

    def backward(g):
        gw = np.empty_like(wd)
        gxp = np.zeros_like(xp)
        for ki in range(3):
            for kj in range(3):
                i0, j0 = ki * d, kj * d
                sl = (slice(None), slice(i0, i0 + s * (ho - 1) + 1, s),
                      slice(j0, j0 + s * (wo - 1) + 1, s))
                gw[:, ki, kj] = (g * xp[sl]).sum(axis=(1, 2))
                gxp[sl] += wd[:, ki, kj][:, None, None] * g
        gx = gxp[:, d:d + h, d:d + w]
        if layer.bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=(1, 2))

    return T._emit("dwconv", out, tuple(inputs), backward)


# ---------------------------------------------------------------------------
# batch normalization

class BatchNorm:
    """Per-channel normalization over the spatial extent of a single map.

    Train mode normalizes by the map's own statistics and folds them into the
    running estimates with momentum 0.1; eval mode uses the running values.
    """

    def __init__(self, channels: int, epsilon: float = 1e-5, momentum: float = 0.1):
        self.gamma = Tensor(np.ones(channels))
        self.beta = Tensor(np.zeros(channels))
        self.running_mean = Tensor(np.zeros(channels))
        self.running_var = Tensor(np.ones(channels))
        self.epsilon = float(epsilon)
        self.momentum = float(momentum)

    @property
    def channels(self) -> int:
        return self.gamma.shape[0]

    def state(self) -> Iterator[StateItem]:
        yield "gamma", self.gamma, True, False
        yield "beta", self.beta, True, False
        yield "running_mean", self.running_mean, False, False
        yield "running_var", self.running_var, False, False

    def __call__(self, x: Tensor, mode: str = "eval",
                 update_running: Optional[bool] = None) -> Tensor:
        return batchnorm_forward(self, x, mode, update_running)


def batchnorm_forward(layer: BatchNorm, x: Tensor, mode: str = "eval",
                      update_running: Optional[bool] = None) -> Tensor:
    if x.rank != 3:
        raise ShapeError(f"batchnorm input must be C,H,W, got {x.shape}")
    if x.shape[0] != layer.channels:
        raise ShapeError(
            f"batchnorm expects {layer.channels} channels, got {x.shape[0]}")
    if mode not in ("train", "eval"):
        raise ShapeError(f"mode must be train or eval, got {mode!r}")
    eps = layer.epsilon
    xd = x.data
    gam, bet = layer.gamma, layer.beta
    if mode == "train":
        n = xd.shape[1] * xd.shape[2]
        mean = xd.mean(axis=(1, 2))
        var = xd.var(axis=(1, 2))
        if update_running is None or update_running:
            m = layer.momentum
            # running variance uses the unbiased estimate, like common practice
            var_u = var * (n / (n - 1)) if n > 1 else var
            layer.running_mean.data[...] = (1 - m) * layer.running_mean.data + m * mean
            layer.running_var.data[...] = (1 - m) * layer.running_var.data + m * var_u
        inv = 1.0 / np.sqrt(var + eps)
        xhat = (xd - mean[:, None, None]) * inv[:, None, None]
        out = gam.data[:, None, None] * xhat + bet.data[:, None, None]

        def backward(g):
            gxhat = g * gam.data[:, None, None]
            sum_g = gxhat.sum(axis=(1, 2))
            sum_gx = (gxhat * xhat).sum(axis=(1, 2))
            gx = (inv[:, None, None] / n) * (
                n * gxhat - sum_g[:, None, None] - xhat * sum_gx[:, None, None])
            ggam = (g * xhat).sum(axis=(1, 2))
            gbet = g.sum(axis=(1, 2))
            return gx, ggam, gbet

        return T._emit("batchnorm_train", out, (x, gam, bet), backward)

    inv = 1.0 / np.sqrt(layer.running_var.data + eps)
    xhat = (xd - layer.running_mean.data[:, None, None]) * inv[:, None, None]
    out = gam.data[:, None, None] * xhat + bet.data[:, None, None]

    def backward(g):
        gx = g * (gam.data * inv)[:, None, None]
        ggam = (g * xhat).sum(axis=(1, 2))
        gbet = g.sum(axis=(1, 2))
        return gx, ggam, gbet

    return T._emit("batchnorm_eval", out, (x, gam, bet), backward)


# ---------------------------------------------------------------------------
# channel attention (squeeze / excite gate)

class ChannelAttention:
    """Per-channel sigmoid gate computed from globally pooled statistics."""

    def __init__(self, reduce: Conv1x1, expand: Conv1x1):
        if reduce.in_channels != expand.out_channels:
            raise ShapeError("reduce input width must match expand output width")
        if reduce.out_channels != expand.in_channels:
            raise ShapeError("reduce output width must match expand input width")
        self.reduce = reduce
        self.expand = expand

    @classmethod
    def create(cls, rng: np.random.Generator, channels: int,
               reduction: int = 16) -> "ChannelAttention":
        reduced = max(4, channels // reduction)
        return cls(Conv1x1.create(rng, channels, reduced, bias=True),
                   Conv1x1.create(rng, reduced, channels, bias=True))

    @property
    def channels(self) -> int:
        return self.reduce.in_channels

    def state(self) -> Iterator[StateItem]:
        for n, t, tr, dc in self.reduce.state():
            yield f"reduce.{n}", t, tr, dc
        for n, t, tr, dc in self.expand.state():
            yield f"expand.{n}", t, tr, dc

    def __call__(self, x: Tensor) -> Tensor:
        return channel_attention_forward(self, x)


def channel_attention_forward(layer: ChannelAttention, x: Tensor) -> Tensor:
    gate = T.global_avg_pool(x)
    gate = T.relu(layer.reduce(gate))
    gate = T.sigmoid(layer.expand(gate))
    return T.mul(x, gate)


# ---------------------------------------------------------------------------
# feed-forward network

class FeedForwardNetwork:
    """Pointwise expand (x2), depthwise 3x3, pointwise project back."""

    def __init__(self, expand: Conv1x1, dw: DepthwiseConv3x3, project: Conv1x1):
        if expand.out_channels != 2 * expand.in_channels:
            raise ShapeError("expansion factor must be exactly 2")
        if dw.channels != expand.out_channels:
            raise ShapeError("depthwise width must match the expanded width")
        if project.in_channels != expand.out_channels or \
                project.out_channels != expand.in_channels:
            raise ShapeError("project must map the expanded width back")
        self.expand = expand
        self.dw = dw
        self.project = project

    @classmethod
    def create(cls, rng: np.random.Generator, channels: int) -> "FeedForwardNetwork":
        return cls(Conv1x1.create(rng, channels, 2 * channels, bias=True),
                   DepthwiseConv3x3.create(rng, 2 * channels, bias=True),
                   Conv1x1.create(rng, 2 * channels, channels, bias=True))

    @property
    def channels(self) -> int:
        return self.expand.in_channels

    def state(self) -> Iterator[StateItem]:
        for n, t, tr, dc in self.expand.state():
            yield f"expand.{n}", t, tr, dc
        for n, t, tr, dc in self.dw.state():
            yield f"dw.{n}", t, tr, dc
        for n, t, tr, dc in self.project.state():
            yield f"project.{n}", t, tr, dc

    def __call__(self, x: Tensor) -> Tensor:
        return ffn_forward(self, x)


def ffn_forward(layer: FeedForwardNetwork, x: Tensor) -> Tensor:
    h = T.relu(layer.expand(x))
    h = T.relu(layer.dw(h))
    return layer.project(h)
