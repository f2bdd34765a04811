"""Walk a feature map through the network one piece at a time.

Run: python demos/03_architecture_tour.py
"""

import numpy as np

from lemore import tensor as T
from lemore.attention import attention_map
from lemore.model import build, toy_config
from lemore.tensor import Tensor

cfg = toy_config()
model = build(cfg)
print(f"toy model: stages {cfg.stage_widths} at strides {cfg.stage_strides}, "
      f"{model.parameter_count():,} registry elements")

rng = np.random.default_rng(0)
img = Tensor(rng.uniform(0, 1, (3, 64, 64)))

print("\n== stem: 3 channels at 64x64 down to stride 4 ==")
h = model.stem_conv(img, "eval")
print("conv 3x3 /2 ->", h.shape)
h = model.stem_dw(h, "eval")
print("depthwise /2 ->", h.shape)
h = model.stem_pw(h, "eval")
print("pointwise   ->", h.shape)

print("\n== encoder stages: multi-view blocks, then a transition ==")
for i, stage in enumerate(model.stages, start=1):
    for j, block in enumerate(stage, start=1):
        h = block(h, "eval")
        views = ",".join(sorted(block.enabled_views))
        print(f"stage {i} block {j} [{views}] ->", h.shape)
    trans = model.transitions[i - 1]
    if trans is not None:
        h = trans(h, "eval")
        print(f"transition {i} ->", h.shape)

print("\n== bottleneck: pooled tokens, one attention map from nine pairs ==")
pre = model.pre_proj(h, "eval")
print("pre-projection ->", pre.shape)
pooled = T.avg_pool_to_grid(pre, *model.bottleneck.token_grid)
attn = attention_map(model.bottleneck, pooled)
print(f"attention over {attn.shape[0]} tokens; row sums:",
      np.unique(np.round(attn.data.sum(axis=1), 9)))
glob = model.bottleneck(pre)
print("bottleneck output ->", glob.shape)

print("\n== decoder: gated fusion up the stages, then the head ==")
logits = model.forward(img, "eval")
print("logits ->", logits.shape)
print("predicted label histogram:",
      np.bincount(logits.data.argmax(axis=0).reshape(-1), minlength=3))
