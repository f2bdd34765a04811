"""Multi-view encoder block.

A feature map is projected along three Cartesian orientations: the transverse
view mixes channels directly, the frontal view mixes along the height axis,
and the lateral view mixes along the width axis (each by permuting that axis
to the front and applying a 1x1 convolution there). Enabled views are summed
and refined by a cascade of depthwise, dilated-depthwise, and channel
attention, with a residual connection to the block input.
"""

from __future__ import annotations

from typing import Iterator, Optional, Set

import numpy as np

from . import tensor as T
from .blocks import (BatchNorm, ChannelAttention, Conv1x1, DepthwiseConv3x3,
                     StateItem)
from .errors import ConfigError, InvalidArgumentError
from .tensor import Tensor

VIEWS = ("transverse", "frontal", "lateral")

# permutation bringing each view's mixing axis to the front of a C,H,W map;
# each is its own inverse
_VIEW_AXES = {
    "transverse": (0, 1, 2),
    "frontal": (1, 0, 2),
    "lateral": (2, 1, 0),
}


def view_project(x: Tensor, view: str, conv: Conv1x1) -> Tensor:
    """Apply ``conv`` along the axis selected by ``view``; shape-preserving."""
    if view not in _VIEW_AXES:
        raise InvalidArgumentError(f"unknown view {view!r}")
    axes = _VIEW_AXES[view]
    if x.shape[axes[0]] != conv.in_channels:
        raise ConfigError(
            f"{view} conv expects leading axis {conv.in_channels}, "
            f"input has {x.shape[axes[0]]}")
    if view == "transverse":
        return conv(x)
    return T.permute(conv(T.permute(x, axes)), axes)


class RefinementChain:
    """Depthwise 3x3, dilated depthwise 3x3 (dilation 2), channel attention,
    each convolution followed by BatchNorm and ReLU."""

    def __init__(self, rng: np.random.Generator, channels: int,
                 use_channel_attention: bool = True, ca_reduction: int = 16):
        self.dw = DepthwiseConv3x3.create(rng, channels, dilation=1, bias=False)
        self.bn_dw = BatchNorm(channels)
        self.dwd = DepthwiseConv3x3.create(rng, channels, dilation=2, bias=False)
        self.bn_dwd = BatchNorm(channels)
        self.ca: Optional[ChannelAttention] = None
        if use_channel_attention:
            self.ca = ChannelAttention.create(rng, channels, ca_reduction)

    def state(self) -> Iterator[StateItem]:
        for prefix, mod in (("dw", self.dw), ("bn_dw", self.bn_dw),
                            ("dwd", self.dwd), ("bn_dwd", self.bn_dwd)):
            for n, t, tr, dc in mod.state():
                yield f"{prefix}.{n}", t, tr, dc
        if self.ca is not None:
            for n, t, tr, dc in self.ca.state():
                yield f"ca.{n}", t, tr, dc

    def __call__(self, x: Tensor, mode: str) -> Tensor:
        h = T.relu(self.bn_dw(self.dw(x), mode))
        h = T.relu(self.bn_dwd(self.dwd(h), mode))
        if self.ca is not None:
            h = self.ca(h)
        return h


class CartesianBlock:
    """One encoder block bound to a fixed operating resolution.

    The frontal and lateral convolutions act along spatial axes, so their
    weights are sized to the configured height and width; the block rejects
    inputs at any other resolution when those views are enabled.
    """

    def __init__(self, rng: np.random.Generator, channels: int,
                 height: int, width: int, enabled_views: Set[str],
                 use_channel_attention: bool = True, ca_reduction: int = 16,
                 refine: bool = True):
        views = set(enabled_views)
        unknown = views - set(VIEWS)
        if unknown:
            raise ConfigError(f"unknown views {sorted(unknown)}")
        if not views:
            raise ConfigError("at least one view must be enabled")
        self.channels = channels
        self.height = height
        self.width = width
        self.enabled_views = views
        self.zeta_t = self.bn_t = None
        self.zeta_f = self.bn_f = None
        self.zeta_l = self.bn_l = None
        if "transverse" in views:
            self.zeta_t = Conv1x1.create(rng, channels, channels, bias=False)
            self.bn_t = BatchNorm(channels)
        if "frontal" in views:
            self.zeta_f = Conv1x1.create(rng, height, height, bias=False)
            self.bn_f = BatchNorm(channels)
        if "lateral" in views:
            self.zeta_l = Conv1x1.create(rng, width, width, bias=False)
            self.bn_l = BatchNorm(channels)
        self.refine: Optional[RefinementChain] = None
        if refine:
            self.refine = RefinementChain(rng, channels, use_channel_attention,
                                          ca_reduction)

    def state(self) -> Iterator[StateItem]:
        named = (("zeta_t", self.zeta_t), ("bn_t", self.bn_t),
                 ("zeta_f", self.zeta_f), ("bn_f", self.bn_f),
                 ("zeta_l", self.zeta_l), ("bn_l", self.bn_l))
        for prefix, mod in named:
            if mod is None:
                continue
            for n, t, tr, dc in mod.state():
                yield f"{prefix}.{n}", t, tr, dc
        if self.refine is not None:
            for n, t, tr, dc in self.refine.state():
                yield f"refine.{n}", t, tr, dc

    def __call__(self, x: Tensor, mode: str = "eval") -> Tensor:
        return cartesian_forward(self, x, mode)


def cartesian_forward(block: CartesianBlock, x: Tensor, mode: str = "eval") -> Tensor:
    """Sum of the enabled view projections (BatchNorm after each), then the
    refinement chain, plus a residual of the block input."""
    c, h, w = x.shape
    if c != block.channels:
        raise ConfigError(f"block expects {block.channels} channels, got {c}")
    needs_spatial = block.enabled_views & {"frontal", "lateral"}
    if needs_spatial and (h, w) != (block.height, block.width):
        raise ConfigError(
            f"block is bound to {block.height}x{block.width}, got {h}x{w}")

    acc = None
    # fixed summation order keeps results deterministic
    for view, conv, bn in (("transverse", block.zeta_t, block.bn_t),
                           ("frontal", block.zeta_f, block.bn_f),
                           ("lateral", block.zeta_l, block.bn_l)):
        if view not in block.enabled_views:
            continue
        proj = bn(view_project(x, view, conv), mode)
        acc = proj if acc is None else T.add(acc, proj)

    if block.refine is None:
        return acc
    return T.add(block.refine(acc, mode), x)
