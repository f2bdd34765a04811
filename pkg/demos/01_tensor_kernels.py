"""A tour of the primitive tensor kernels, each checked against a hand oracle.

Run: python demos/01_tensor_kernels.py
"""

import numpy as np

from lemore import tensor as T
from lemore.tensor import Tensor

rng = np.random.default_rng(0)

print("== axis permutation ==")
x = Tensor(rng.uniform(-1, 1, (2, 3, 4)))
y = T.permute(x, (1, 0, 2))
print("shape", x.shape, "->", y.shape)
back = T.permute(y, (1, 0, 2))
print("inverse permutation recovers input exactly:",
      np.array_equal(back.data, x.data))

print("\n== matrix product vs a triple loop ==")
a, b = rng.uniform(-1, 1, (4, 5)), rng.uniform(-1, 1, (5, 3))
got = T.matmul(Tensor(a), Tensor(b)).data
want = np.zeros((4, 3))
for i in range(4):
    for j in range(3):
        for k in range(5):
            want[i, j] += a[i, k] * b[k, j]
print("max |lib - loop| =", np.abs(got - want).max())

print("\n== row softmax ==")
logits = Tensor(rng.uniform(-4, 4, (3, 5)))
s = T.softmax_rows(logits)
print("row sums:", s.data.sum(axis=1))
shifted = T.softmax_rows(Tensor(logits.data + 123.0))
print("shift invariance drift:", np.abs(shifted.data - s.data).max())

print("\n== pooling ==")
x = Tensor(rng.uniform(0, 1, (1, 5, 5)))
pooled = T.avg_pool_to_grid(x, 2, 2)
print("adaptive 5x5 -> 2x2 bins:")
print(np.round(pooled.data[0], 4))
print("bin (0,0) means rows 0:2, cols 0:2 ->",
      round(float(x.data[0, :2, :2].mean()), 4))

print("\n== bilinear upsampling ==")
x = Tensor(np.array([[[0.0, 1.0], [2.0, 3.0]]]))
up = T.bilinear_upsample(x, 4, 4)
print(np.round(up.data[0], 3))
print("bounds preserved:",
      up.data.min() >= x.data.min() and up.data.max() <= x.data.max())
