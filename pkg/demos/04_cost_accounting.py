"""Static cost accounting: the per-layer budget and the ablation ladder.

Run: python demos/04_cost_accounting.py
"""

from lemore.analysis import ablation_ladder, analyze_config, render_ladder
from lemore.model import ModelConfig

cfg = ModelConfig()
print("== default model at 512x512 ==")
report = analyze_config(cfg)
print(report.render_text())

print("\n== the same topology probed at 448x448 ==")
small = analyze_config(cfg, (448, 448))
print(f"params {small.total_params / 1e6:.3f}M, "
      f"flops {small.total_flops / 1e9:.4f}G")

print("\n== toggle ladder: views, channel gate, bottleneck attention ==")
rows = ablation_ladder(cfg)
print(render_ladder(rows))
params = [r.params for r in rows]
print("strictly increasing:", all(b > a for a, b in zip(params, params[1:])))
