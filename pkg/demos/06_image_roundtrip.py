"""Scene to PPM to model to label PGM and palette overlay, end to end.

Run: python demos/06_image_roundtrip.py   (writes into demos/out/)
"""

import os

import numpy as np

from lemore.io_formats import (default_palette, load_weights, read_ppm,
                               save_weights, write_color_ppm, write_label_pgm,
                               write_ppm)
from lemore.model import build, toy_config
from lemore.training import generate_scene

out_dir = os.path.join(os.path.dirname(__file__), "out")
os.makedirs(out_dir, exist_ok=True)

scene = generate_scene(seed=7, size=64)
ppm_path = os.path.join(out_dir, "scene.ppm")
write_ppm(scene.image.data, ppm_path)
print("wrote", ppm_path)

img = read_ppm(ppm_path)
print("round trip max error:",
      np.abs(img.data - scene.image.data).max(), "(8-bit quantization)")

model = build(toy_config(seed=0))
weights_path = os.path.join(out_dir, "toy.lmwt")
save_weights(model, weights_path)
load_weights(model, weights_path)
print("checkpoint round trip ok:", weights_path)

logits = model.forward(img, "eval")
pred = logits.data.argmax(axis=0)
pgm_path = os.path.join(out_dir, "pred.pgm")
write_label_pgm(pred, pgm_path)
write_color_ppm(pred, default_palette(3), os.path.join(out_dir, "pred_color.ppm"))
write_color_ppm(scene.labels, default_palette(3),
                os.path.join(out_dir, "truth_color.ppm"))
print("wrote predictions (untrained weights, so labels are arbitrary)")
print("label histogram:", np.bincount(pred.reshape(-1), minlength=3))
