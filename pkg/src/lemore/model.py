"""Model assembly: declarative configuration, deterministic construction,
and the full forward pass.

Topology: a stride-4 stem (full 3x3, then depthwise + pointwise, all
stride-2 where needed), a stack of multi-view encoder stages joined by
depthwise/pointwise downsampling transitions, a nested-attention bottleneck
at the deepest stride (behind a channel-halving projection), and a gated
fusion decoder that walks back up the fused stages before a two-convolution
head emits logits at the input resolution.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np

from . import tensor as T
from .attention import NestedAttention
from .blocks import BatchNorm, Conv1x1, Conv3x3, DepthwiseConv3x3, StateItem
from .decoder import GatedFusion, SegmentationHead
from .encoder import VIEWS, CartesianBlock
from .errors import ConfigError, ShapeError
from .tensor import Tensor

# widths not part of the serialized configuration; fixed by the builder
DECODER_WIDTH = 40
CA_REDUCTION = 16


def _default_views() -> List[List[str]]:
    return [["transverse"], ["transverse"],
            ["transverse", "frontal", "lateral"],
            ["transverse", "frontal", "lateral"]]


@dataclass
class ModelConfig:
    """Everything the architecture leaves open, in one serializable record."""

    input_size: Tuple[int, int] = (512, 512)
    num_classes: int = 150
    stem_width: int = 12
    stage_widths: List[int] = field(default_factory=lambda: [16, 32, 80, 336])
    stage_strides: List[int] = field(default_factory=lambda: [4, 8, 16, 32])
    blocks_per_stage: List[int] = field(default_factory=lambda: [1, 1, 2, 8])
    enabled_views: List[List[str]] = field(default_factory=_default_views)
    use_channel_attention: bool = True
    use_nested_attention: bool = True
    token_grid: Tuple[int, int] = (8, 8)
    fusion_stages: List[int] = field(default_factory=lambda: [2, 3, 4])
    seed: int = 0

    FIELDS = ("input_size", "num_classes", "stem_width", "stage_widths",
              "stage_strides", "blocks_per_stage", "enabled_views",
              "use_channel_attention", "use_nested_attention", "token_grid",
              "fusion_stages", "seed")

    def validate(self) -> None:
        n = len(self.stage_widths)
        if n < 2:
            raise ConfigError("stage_widths: need at least 2 stages")
        if len(self.stage_strides) != n:
            raise ConfigError("stage_strides: length must match stage_widths")
        if len(self.blocks_per_stage) != n:
            raise ConfigError("blocks_per_stage: length must match stage_widths")
        if len(self.enabled_views) != n:
            raise ConfigError("enabled_views: one view set per stage")
        if any(w < 1 for w in self.stage_widths):
            raise ConfigError("stage_widths: widths must be positive")
        if any(b < 1 for b in self.blocks_per_stage):
            raise ConfigError("blocks_per_stage: block counts must be positive")
        if self.stage_strides[0] != 4:
            raise ConfigError("stage_strides: the stem fixes the first stride at 4")
        for a, b in zip(self.stage_strides, self.stage_strides[1:]):
            if b <= a:
                raise ConfigError("stage_strides: strides must strictly increase")
            if b % a:
                raise ConfigError("stage_strides: each stride must divide the next")
        h, w = self.input_size
        smax = self.stage_strides[-1]
        if h < smax or w < smax or h % smax or w % smax:
            raise ConfigError(
                f"input_size: {h}x{w} must be divisible by the largest stride {smax}")
        for i, views in enumerate(self.enabled_views):
            vs = set(views)
            if not vs:
                raise ConfigError(f"enabled_views: stage {i + 1} has no views")
            bad = vs - set(VIEWS)
            if bad:
                raise ConfigError(f"enabled_views: unknown views {sorted(bad)}")
        if self.num_classes < 1:
            raise ConfigError("num_classes: must be positive")
        if self.stem_width < 1:
            raise ConfigError("stem_width: must be positive")
        gh, gw = self.token_grid
        if gh < 1 or gw < 1:
            raise ConfigError("token_grid: grid sizes must be positive")
        if self.use_nested_attention:
            bh, bw = h // smax, w // smax
            if gh > bh or gw > bw:
                raise ConfigError(
                    f"token_grid: {gh}x{gw} exceeds the {bh}x{bw} bottleneck map")
        fused = set(self.fusion_stages)
        if not fused:
            raise ConfigError("fusion_stages: at least one stage must be fused")
        if not fused <= set(range(1, n + 1)):
            raise ConfigError(
                f"fusion_stages: indices must lie in 1..{n}")

    # -- serialization ------------------------------------------------------

    def to_dict(self) -> dict:
        d = asdict(self)
        d["input_size"] = list(self.input_size)
        d["token_grid"] = list(self.token_grid)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        unknown = set(d) - set(cls.FIELDS)
        if unknown:
            raise ConfigError(f"unknown config fields {sorted(unknown)}")
        kwargs = dict(d)
        if "input_size" in kwargs:
            kwargs["input_size"] = tuple(kwargs["input_size"])
        if "token_grid" in kwargs:
            kwargs["token_grid"] = tuple(kwargs["token_grid"])
        cfg = cls(**kwargs)
        cfg.validate()
        return cfg

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "ModelConfig":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError(f"config is not valid JSON: {e}") from e
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(d)

    def with_overrides(self, **kwargs) -> "ModelConfig":
        d = self.to_dict()
        for k, v in kwargs.items():
            if k not in self.FIELDS:
                raise ConfigError(f"unknown config field {k!r}")
            d[k] = v
        return ModelConfig.from_dict(d)


def toy_config(size: int = 64, num_classes: int = 3, seed: int = 0) -> ModelConfig:
    """Small two-stage configuration for desk-scale experiments."""
    return ModelConfig(
        input_size=(size, size), num_classes=num_classes, stem_width=8,
        stage_widths=[16, 32], stage_strides=[4, 8], blocks_per_stage=[2, 2],
        enabled_views=[["transverse"],
                       ["transverse", "frontal", "lateral"]],
        token_grid=(min(8, size // 8), min(8, size // 8)),
        fusion_stages=[1, 2], seed=seed)


# ---------------------------------------------------------------------------


class _ConvBN:
    """Convolution plus BatchNorm plus ReLU, as one named unit."""

    def __init__(self, conv, channels: int):
        self.conv = conv
        self.bn = BatchNorm(channels)

    def state(self) -> Iterator[StateItem]:
        for n, t, tr, dc in self.conv.state():
            yield f"conv.{n}", t, tr, dc
        for n, t, tr, dc in self.bn.state():
            yield f"bn.{n}", t, tr, dc

    def __call__(self, x: Tensor, mode: str) -> Tensor:
        return T.relu(self.bn(self.conv(x), mode))


class _Transition:
    """Stride-s depthwise 3x3 followed by a pointwise channel change."""

    def __init__(self, rng, in_ch: int, out_ch: int, stride: int):
        self.dw = _ConvBN(DepthwiseConv3x3.create(rng, in_ch, dilation=1,
                                                  stride=stride, bias=False), in_ch)
        self.pw = _ConvBN(Conv1x1.create(rng, in_ch, out_ch, bias=False), out_ch)

    def state(self) -> Iterator[StateItem]:
        for n, t, tr, dc in self.dw.state():
            yield f"dw.{n}", t, tr, dc
        for n, t, tr, dc in self.pw.state():
            yield f"pw.{n}", t, tr, dc

    def __call__(self, x: Tensor, mode: str) -> Tensor:
        return self.pw(self.dw(x, mode), mode)


@dataclass
class RegistryEntry:
    tensor: Tensor
    trainable: bool
    decay: bool


class LeMoReModel:
    """Assembled network with a flat name-to-tensor registry."""

    def __init__(self, config: ModelConfig):
        config.validate()
        self.config = config
        rng = np.random.default_rng(config.seed)
        h, w = config.input_size
        widths = config.stage_widths
        strides = config.stage_strides

        self.stem_conv = _ConvBN(
            Conv3x3.create(rng, 3, config.stem_width, stride=2, bias=False),
            config.stem_width)
        self.stem_dw = _ConvBN(
            DepthwiseConv3x3.create(rng, config.stem_width, stride=2, bias=False),
            config.stem_width)
        self.stem_pw = _ConvBN(
            Conv1x1.create(rng, config.stem_width, widths[0], bias=False),
            widths[0])

        self.stages: List[List[CartesianBlock]] = []
        self.transitions: List[Optional[_Transition]] = []
        for i, (c, blocks_n, s) in enumerate(zip(widths, config.blocks_per_stage,
                                                 strides)):
            stage = [CartesianBlock(rng, c, h // s, w // s,
                                    set(config.enabled_views[i]),
                                    config.use_channel_attention, CA_REDUCTION)
                     for _ in range(blocks_n)]
            self.stages.append(stage)
            if i + 1 < len(widths):
                ratio = strides[i + 1] // s
                self.transitions.append(
                    _Transition(rng, c, widths[i + 1], ratio))
            else:
                self.transitions.append(None)

        self.pre_proj: Optional[_ConvBN] = None
        self.bottleneck: Optional[NestedAttention] = None
        global_ch = widths[-1]
        if config.use_nested_attention:
            attn_ch = max(4, widths[-1] // 2)
            self.pre_proj = _ConvBN(
                Conv1x1.create(rng, widths[-1], attn_ch, bias=False), attn_ch)
            self.bottleneck = NestedAttention(rng, attn_ch, config.token_grid)
            global_ch = attn_ch

        self.fusions: Dict[int, GatedFusion] = {}
        g_ch = global_ch
        for idx in sorted(set(config.fusion_stages), reverse=True):
            self.fusions[idx] = GatedFusion.create(
                rng, widths[idx - 1], g_ch, DECODER_WIDTH)
            g_ch = DECODER_WIDTH
        self.head = SegmentationHead.create(rng, DECODER_WIDTH,
                                            config.num_classes)

        self.registry: Dict[str, RegistryEntry] = {}
        for name, t, trainable, decay in self._walk_state():
            if name in self.registry:
                raise ConfigError(f"duplicate registry name {name}")
            self.registry[name] = RegistryEntry(t, trainable, decay)

    # -- state and structure -------------------------------------------------

    def _walk_state(self) -> Iterator[StateItem]:
        for prefix, mod in (("stem.conv_in", self.stem_conv),
                            ("stem.dw", self.stem_dw),
                            ("stem.pw", self.stem_pw)):
            for n, t, tr, dc in mod.state():
                yield f"{prefix}.{n}", t, tr, dc
        for i, stage in enumerate(self.stages, start=1):
            for j, block in enumerate(stage, start=1):
                for n, t, tr, dc in block.state():
                    yield f"stages.{i}.blocks.{j}.{n}", t, tr, dc
            trans = self.transitions[i - 1]
            if trans is not None:
                for n, t, tr, dc in trans.state():
                    yield f"transitions.{i}.{n}", t, tr, dc
        if self.pre_proj is not None:
            for n, t, tr, dc in self.pre_proj.state():
                yield f"bottleneck.pre_proj.{n}", t, tr, dc
            for n, t, tr, dc in self.bottleneck.state():
                yield f"bottleneck.attn.{n}", t, tr, dc
        for idx in sorted(self.fusions, reverse=True):
            for n, t, tr, dc in self.fusions[idx].state():
                yield f"decoder.fusion.{idx}.{n}", t, tr, dc
        for n, t, tr, dc in self.head.state():
            yield f"decoder.head.{n}", t, tr, dc

    def parameters(self) -> List[Tuple[str, Tensor]]:
        """Trainable entries, in registry order."""
        return [(n, e.tensor) for n, e in self.registry.items() if e.trainable]

    def parameter_count(self) -> int:
        """Total element count of the registry (all persistent tensors)."""
        return sum(e.tensor.size for e in self.registry.values())

    # -- forward -------------------------------------------------------------

    def forward(self, image: Tensor, mode: str = "eval") -> Tensor:
        """Class logits at the configured input resolution."""
        if mode not in ("train", "eval"):
            raise ConfigError(f"mode must be train or eval, got {mode!r}")
        h, w = self.config.input_size
        if image.shape != (3, h, w):
            raise ShapeError(
                f"expected input 3x{h}x{w}, got {image.shape}")
        x = self.stem_conv(image, mode)
        x = self.stem_dw(x, mode)
        x = self.stem_pw(x, mode)

        stage_out: List[Tensor] = []
        for i, stage in enumerate(self.stages):
            for block in stage:
                x = block(x, mode)
            stage_out.append(x)
            trans = self.transitions[i]
            if trans is not None:
                x = trans(x, mode)

        glob = stage_out[-1]
        if self.bottleneck is not None:
            glob = self.bottleneck(self.pre_proj(glob, mode))

        fused_idx = sorted(self.fusions, reverse=True)
        for idx in fused_idx:
            glob = self.fusions[idx](stage_out[idx - 1], glob)
        return self.head(glob, h, w, mode)

    def __call__(self, image: Tensor, mode: str = "eval") -> Tensor:
        return self.forward(image, mode)


def build(config: ModelConfig) -> LeMoReModel:
    """Deterministic construction: identical config and seed give
    bit-identical registries."""
    return LeMoReModel(config)
