"""Gated fusion of local (encoder) and global (bottleneck) features, and the
two-convolution segmentation head."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from . import tensor as T
from .blocks import BatchNorm, Conv1x1, StateItem
from .errors import ShapeError
from .tensor import Tensor


class GatedFusion:
    """local_proj(local) gated by sigmoid(gate_proj(global)), plus a global
    residual projection; all three 1x1 convolutions share an output width."""

    def __init__(self, local_proj: Conv1x1, gate_proj: Conv1x1,
                 global_proj: Conv1x1):
        widths = {local_proj.out_channels, gate_proj.out_channels,
                  global_proj.out_channels}
        if len(widths) != 1:
            raise ShapeError("fusion projections must share an output width")
        if gate_proj.in_channels != global_proj.in_channels:
            raise ShapeError("gate and global projections read the same input")
        self.local_proj = local_proj
        self.gate_proj = gate_proj
        self.global_proj = global_proj

    @classmethod
    def create(cls, rng: np.random.Generator, local_ch: int, global_ch: int,
               out_ch: int) -> "GatedFusion":
        return cls(Conv1x1.create(rng, local_ch, out_ch, bias=True),
                   Conv1x1.create(rng, global_ch, out_ch, bias=True),
                   Conv1x1.create(rng, global_ch, out_ch, bias=True))

    def state(self) -> Iterator[StateItem]:
        for prefix, conv in (("local_proj", self.local_proj),
                             ("gate_proj", self.gate_proj),
                             ("global_proj", self.global_proj)):
            for n, t, tr, dc in conv.state():
                yield f"{prefix}.{n}", t, tr, dc

    def __call__(self, local: Tensor, global_feat: Tensor) -> Tensor:
        return gated_fusion_forward(self, local, global_feat)


def gated_fusion_forward(gfm: GatedFusion, local: Tensor,
                         global_feat: Tensor) -> Tensor:
    """Fuse at the local feature's resolution, upsampling the global feature
    first when it is coarser."""
    _, lh, lw = local.shape
    _, gh, gw = global_feat.shape
    if (gh, gw) != (lh, lw):
        global_feat = T.bilinear_upsample(global_feat, lh, lw)
    gated = T.mul(gfm.local_proj(local), T.sigmoid(gfm.gate_proj(global_feat)))
    return T.add(gated, gfm.global_proj(global_feat))


class SegmentationHead:
    """Two 1x1 convolutions producing per-class logits; the hidden width
    equals the fused input width."""

    def __init__(self, conv_a: Conv1x1, bn: BatchNorm, conv_b: Conv1x1):
        if conv_a.out_channels != bn.channels:
            raise ShapeError("head BatchNorm width must match conv_a output")
        if conv_b.in_channels != conv_a.out_channels:
            raise ShapeError("conv_b input must match conv_a output")
        self.conv_a = conv_a
        self.bn = bn
        self.conv_b = conv_b

    @classmethod
    def create(cls, rng: np.random.Generator, in_ch: int,
               num_classes: int) -> "SegmentationHead":
        return cls(Conv1x1.create(rng, in_ch, in_ch, bias=False),
                   BatchNorm(in_ch),
                   Conv1x1.create(rng, in_ch, num_classes, bias=True))

    @property
    def num_classes(self) -> int:
        return self.conv_b.out_channels

    def state(self) -> Iterator[StateItem]:
        for prefix, mod in (("conv_a", self.conv_a), ("bn", self.bn),
                            ("conv_b", self.conv_b)):
            for n, t, tr, dc in mod.state():
                yield f"{prefix}.{n}", t, tr, dc

    def __call__(self, fused: Tensor, out_h: int, out_w: int,
                 mode: str = "eval") -> Tensor:
        return seg_head_forward(self, fused, out_h, out_w, mode)


def seg_head_forward(head: SegmentationHead, fused: Tensor, out_h: int,
                     out_w: int, mode: str = "eval") -> Tensor:
    """Class logits at out_h x out_w (bilinearly upsampled from the fused
    resolution)."""
    h = T.relu(head.bn(head.conv_a(fused), mode))
    logits = head.conv_b(h)
    if logits.shape[1:] != (out_h, out_w):
        logits = T.bilinear_upsample(logits, out_h, out_w)
    return logits


def label_map(logits: Tensor) -> np.ndarray:
    """Per-pixel argmax over the class axis."""
    return logits.data.argmax(axis=0)
