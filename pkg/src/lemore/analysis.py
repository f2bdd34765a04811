"""Static parameter and MAC accounting per layer and per model.

Conventions:
  * conv MACs = output elements x input channels x kernel area
    (depthwise: output elements x kernel area);
  * attention MACs use the factored nine-pair identity: N^2 d for the logits,
    N^2 d for value weighting, plus the projection convolutions on the token
    grid;
  * normalization, activations, gating, residuals, pooling and resampling are
    tallied separately as per-element operations ("elem_ops", one per output
    element) and excluded from the MAC/FLOP totals; a combined figure that
    folds them in is reported alongside.
  * FLOPs = 2 x MACs.

Parameter columns are not recomputed from formulas: each row sums the actual
registry entries under its name prefix, so the report matches the model
exactly by construction.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import List, Optional, Tuple

from .errors import InvalidArgumentError
from .model import DECODER_WIDTH, LeMoReModel, ModelConfig, build


@dataclass
class CostRow:
    name: str
    params: int
    macs: int
    elem_ops: int


@dataclass
class CostReport:
    rows: List[CostRow]
    probe_resolution: Tuple[int, int]
    convention: str = "flops = 2 * macs; elem_ops reported separately"

    @property
    def total_params(self) -> int:
        return sum(r.params for r in self.rows)

    @property
    def total_macs(self) -> int:
        return sum(r.macs for r in self.rows)

    @property
    def total_elem_ops(self) -> int:
        return sum(r.elem_ops for r in self.rows)

    @property
    def total_flops(self) -> int:
        return 2 * self.total_macs

    @property
    def total_flops_with_elementwise(self) -> int:
        return self.total_flops + self.total_elem_ops

    def render_text(self) -> str:
        name_w = max(len(r.name) for r in self.rows)
        name_w = max(name_w, len("layer"))
        lines = [
            f"cost report at {self.probe_resolution[0]}x{self.probe_resolution[1]}",
            f"{'layer':<{name_w}}  {'params':>10}  {'macs':>14}  {'elem_ops':>12}",
        ]
        for r in self.rows:
            lines.append(f"{r.name:<{name_w}}  {r.params:>10,}  {r.macs:>14,}  "
                         f"{r.elem_ops:>12,}")
        lines.append("-" * (name_w + 42))
        lines.append(f"{'total':<{name_w}}  {self.total_params:>10,}  "
                     f"{self.total_macs:>14,}  {self.total_elem_ops:>12,}")
        lines.append(f"params {self.total_params / 1e6:.3f}M | "
                     f"flops {self.total_flops / 1e9:.4f}G (2*macs) | "
                     f"with elementwise {self.total_flops_with_elementwise / 1e9:.4f}G")
        return "\n".join(lines)

    def to_json_dict(self) -> dict:
        return {
            "probe_resolution": list(self.probe_resolution),
            "convention": self.convention,
            "rows": [{"name": r.name, "params": r.params, "macs": r.macs,
                      "elem_ops": r.elem_ops} for r in self.rows],
            "totals": {
                "params": self.total_params,
                "macs": self.total_macs,
                "flops": self.total_flops,
                "elem_ops": self.total_elem_ops,
                "flops_with_elementwise": self.total_flops_with_elementwise,
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), indent=2) + "\n"


def _prefix_params(model: LeMoReModel, prefix: str) -> int:
    return sum(e.tensor.size for n, e in model.registry.items()
               if n == prefix or n.startswith(prefix + "."))


def count_costs(model: LeMoReModel, resolution: Optional[Tuple[int, int]] = None
                ) -> CostReport:
    """Per-layer costs for a built model.

    The frontal/lateral view convolutions are sized to the model's configured
    resolution, so probing is only defined there; rebuild at the target
    resolution (``analyze_config``) to probe another one.
    """
    cfg = model.config
    if resolution is None:
        resolution = cfg.input_size
    h, w = int(resolution[0]), int(resolution[1])
    smax = cfg.stage_strides[-1]
    if h % smax or w % smax:
        raise InvalidArgumentError(
            f"resolution {h}x{w} must be divisible by the largest stride {smax}")
    if (h, w) != tuple(cfg.input_size):
        raise InvalidArgumentError(
            "model weights are bound to "
            f"{cfg.input_size[0]}x{cfg.input_size[1]}; rebuild to probe {h}x{w}")

    rows: List[CostRow] = []

    def row(name: str, macs: int, elem: int,
            prefixes: Optional[List[str]] = None) -> None:
        params = sum(_prefix_params(model, p) for p in (prefixes or [name]))
        rows.append(CostRow(name, params, int(macs), int(elem)))

    s0 = cfg.stem_width
    px2 = (h // 2) * (w // 2)
    px4 = (h // 4) * (w // 4)
    c1 = cfg.stage_widths[0]
    row("stem.conv_in", px2 * 3 * 9 * s0, 3 * px2 * s0)      # bn(2) + relu
    row("stem.dw", px4 * 9 * s0, 3 * px4 * s0)
    row("stem.pw", px4 * s0 * c1, 3 * px4 * c1)

    for i, (c, blocks_n, s) in enumerate(zip(cfg.stage_widths,
                                             cfg.blocks_per_stage,
                                             cfg.stage_strides), start=1):
        hs, ws = h // s, w // s
        px = hs * ws
        views = set(cfg.enabled_views[i - 1])
        for j in range(1, blocks_n + 1):
            macs = 0
            elem = 0
            if "transverse" in views:
                macs += px * c * c
                elem += 2 * px * c                 # bn
            if "frontal" in views:
                macs += px * c * hs                # hs-tap mix per output element
                elem += 2 * px * c
            if "lateral" in views:
                macs += px * c * ws
                elem += 2 * px * c
            elem += (len(views) - 1) * px * c      # view summation
            # refinement: dw + bn + relu, dilated dw + bn + relu
            macs += 2 * px * 9 * c
            elem += 2 * 3 * px * c
            if cfg.use_channel_attention:
                block = model.stages[i - 1][j - 1]
                ca = block.refine.ca
                cr = ca.reduce.out_channels
                macs += c * cr + cr * c            # squeeze/excite at 1x1
                elem += px * c + c + cr + px * c   # pool, relu, sigmoid, gate
            elem += px * c                         # residual add
            row(f"stages.{i}.blocks.{j}", macs, elem)
        if i < len(cfg.stage_widths):
            s_next = cfg.stage_strides[i]
            pxn = (h // s_next) * (w // s_next)
            c_next = cfg.stage_widths[i]
            macs = pxn * 9 * c + pxn * c * c_next
            elem = 3 * pxn * c + 3 * pxn * c_next
            row(f"transitions.{i}", macs, elem)

    if cfg.use_nested_attention:
        c4 = cfg.stage_widths[-1]
        d = model.bottleneck.channels
        hs, ws = h // smax, w // smax
        px = hs * ws
        gh, gw = cfg.token_grid
        n_tok = gh * gw
        row("bottleneck.pre_proj", px * c4 * d, 3 * px * d)
        qkv_prefixes = [f"bottleneck.attn.{tag}{e}"
                        for e in (1, 2, 3) for tag in ("q", "k", "v")]
        row("bottleneck.attn.qkv", 9 * n_tok * d * d, px * d,   # pooling to grid
            prefixes=qkv_prefixes)
        row("bottleneck.attn.pairs", 2 * n_tok * n_tok * d,
            5 * n_tok * n_tok)                                  # scale + softmax
        ffn_macs = n_tok * (d * 2 * d + 9 * 2 * d + 2 * d * d)
        row("bottleneck.attn.ffn",
            ffn_macs, 2 * n_tok * 2 * d + n_tok * d + px * d)   # relus, residual, upsample

    g_ch = model.bottleneck.channels if cfg.use_nested_attention \
        else cfg.stage_widths[-1]
    for idx in sorted(model.fusions, reverse=True):
        s = cfg.stage_strides[idx - 1]
        px = (h // s) * (w // s)
        c_loc = cfg.stage_widths[idx - 1]
        macs = px * c_loc * DECODER_WIDTH + 2 * px * g_ch * DECODER_WIDTH
        elem = px * (g_ch + 3 * DECODER_WIDTH)    # upsample, sigmoid, mul, add
        row(f"decoder.fusion.{idx}", macs, elem)
        g_ch = DECODER_WIDTH

    s_head = cfg.stage_strides[min(model.fusions) - 1]
    pxh = (h // s_head) * (w // s_head)
    k = cfg.num_classes
    macs = pxh * DECODER_WIDTH * DECODER_WIDTH + pxh * DECODER_WIDTH * k
    elem = 3 * pxh * DECODER_WIDTH + h * w * k    # bn + relu + final upsample
    row("decoder.head", macs, elem)

    report = CostReport(rows, (h, w))
    assert report.total_params == model.parameter_count()
    return report


def analyze_config(config: ModelConfig,
                   resolution: Optional[Tuple[int, int]] = None) -> CostReport:
    """Build at the probe resolution and count costs there."""
    if resolution is not None and tuple(resolution) != tuple(config.input_size):
        config = config.with_overrides(input_size=list(resolution))
    return count_costs(build(config))


# ---------------------------------------------------------------------------
# ablation ladder

ABLATION_COMBOS: List[Tuple[str, bool, bool, bool, bool]] = [
    # label, frontal, lateral, channel attention, nested attention
    ("T", False, False, False, False),
    ("T+F", True, False, False, False),
    ("T+F+L", True, True, False, False),
    ("T+F+L+CA", True, True, True, False),
    ("T+N", False, False, False, True),
    ("T+F+N", True, False, False, True),
    ("T+F+L+N", True, True, False, True),
    ("T+F+L+CA+N", True, True, True, True),
]


@dataclass
class AblationRow:
    label: str
    params: int
    macs: int


def ablation_config(config: ModelConfig, frontal: bool, lateral: bool,
                    ca: bool, nattn: bool) -> ModelConfig:
    """Restrict a configuration to a toggle combination. View toggles remove
    that view from every stage where the base config enables it."""
    views = []
    for stage_views in config.enabled_views:
        vs = [v for v in stage_views
              if v == "transverse" or (v == "frontal" and frontal)
              or (v == "lateral" and lateral)]
        views.append(vs)
    return config.with_overrides(enabled_views=views,
                                 use_channel_attention=ca,
                                 use_nested_attention=nattn)


def ablation_ladder(config: ModelConfig) -> List[AblationRow]:
    """Parameter/MAC counts for the eight toggle combinations, in ladder
    order (views added first, then channel attention, then the bottleneck)."""
    out = []
    for label, f, l, ca, nattn in ABLATION_COMBOS:
        cfg = ablation_config(config, f, l, ca, nattn)
        report = count_costs(build(cfg))
        out.append(AblationRow(label, report.total_params, report.total_macs))
    return out


def render_ladder(rows: List[AblationRow]) -> str:
    lines = [f"{'combo':<12} {'params':>10} {'macs':>14} {'flops(G)':>9}"]
    for r in rows:
        lines.append(f"{r.label:<12} {r.params:>10,} {r.macs:>14,} "
                     f"{2 * r.macs / 1e9:>9.4f}")
    return "\n".join(lines)
