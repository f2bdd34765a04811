"""How the reverse-mode tape works, and why we trust its gradients.

Run: python demos/02_autodiff_tape.py
"""

import numpy as np

from lemore import tensor as T
from lemore.autodiff import Tape
from lemore.blocks import Conv1x1
from lemore.gradcheck import finite_diff_check, sweep_registry
from lemore.tensor import Tensor

rng = np.random.default_rng(0)

print("== recording a computation ==")
x = Tensor(rng.uniform(-1, 1, (3, 4)))
w = Tensor(rng.uniform(-1, 1, (4, 2)))
with Tape() as tape:
    h = T.matmul(x, w)
    s = T.sigmoid(h)
    loss = T.mean_all(s)
print(f"recorded {len(tape)} nodes for matmul -> sigmoid -> mean")

grads = tape.backward(loss)
print("x gradient shape:", grads.get(x).shape)
print("w gradient shape:", grads.get(w).shape)

print("\n== the loss gradient of the loss is one ==")
print("d(loss)/d(loss) =", grads.get(loss))

print("\n== analytic vs central differences ==")
err = finite_diff_check(
    lambda t: T.mean_all(T.sigmoid(T.matmul(t, w))), x)
print(f"matmul->sigmoid chain: max relative error {err:.2e}")

conv = Conv1x1.create(rng, 3, 2)
img = Tensor(rng.uniform(-1, 1, (3, 5, 5)))
err = finite_diff_check(lambda t: T.mean_all(conv(t)), img)
print(f"pointwise convolution:  max relative error {err:.2e}")

print("\n== sweeping every registered op ==")
results = sweep_registry(seed=0)
worst_name, worst = max(results, key=lambda r: r[1])
print(f"{len(results)} ops checked; worst is {worst_name} at {worst:.2e}")
