"""Nested attention bottleneck.

Three query/key/value triplets are produced by 1x1 convolutions on a pooled
token grid. All nine query-key products are aggregated into a single
attention map, which weights the summed values; a feed-forward network with a
residual finishes the block, and the result is upsampled back to the input
resolution.

The nine-pair aggregation is evaluated in its factored form
(sum of Q) @ (sum of K)^T, which equals the explicit double sum by
bilinearity and is what the cost analyzer counts.
"""

from __future__ import annotations

import math
from typing import Iterator, List, Tuple

import numpy as np

from . import tensor as T
from .blocks import Conv1x1, FeedForwardNetwork, StateItem
from .errors import ShapeError
from .tensor import Tensor


class NestedAttention:
    """Implicit-view bottleneck over a fixed gh x gw token grid."""

    def __init__(self, rng: np.random.Generator, channels: int,
                 token_grid: Tuple[int, int], normalize: bool = True):
        self.channels = channels
        self.token_grid = (int(token_grid[0]), int(token_grid[1]))
        # normalize=False keeps the raw unscaled aggregation for A/B probes
        self.normalize = normalize
        self.triplets: List[Tuple[Conv1x1, Conv1x1, Conv1x1]] = []
        for _ in range(3):
            q = Conv1x1.create(rng, channels, channels, bias=True)
            k = Conv1x1.create(rng, channels, channels, bias=True)
            v = Conv1x1.create(rng, channels, channels, bias=True)
            self.triplets.append((q, k, v))
        self.ffn = FeedForwardNetwork.create(rng, channels)

    @property
    def scale(self) -> float:
        return 1.0 / (3.0 * math.sqrt(self.channels))

    def state(self) -> Iterator[StateItem]:
        for e, (q, k, v) in enumerate(self.triplets, start=1):
            for tag, conv in (("q", q), ("k", k), ("v", v)):
                for n, t, tr, dc in conv.state():
                    yield f"{tag}{e}.{n}", t, tr, dc
        for n, t, tr, dc in self.ffn.state():
            yield f"ffn.{n}", t, tr, dc

    def __call__(self, x: Tensor) -> Tensor:
        return nested_attention_forward(self, x)


def _tokens(x: Tensor) -> Tensor:
    """Flatten a d,gh,gw map to an N x d token matrix (row-major positions)."""
    d, gh, gw = x.shape
    return T.permute(T.reshape(x, (d, gh * gw)), (1, 0))


def attention_map(layer: NestedAttention, pooled: Tensor) -> Tensor:
    """Row-stochastic attention over tokens from the nine query-key pairs."""
    q_sum = k_sum = None
    for q, k, _ in layer.triplets:
        qt = _tokens(q(pooled))
        kt = _tokens(k(pooled))
        q_sum = qt if q_sum is None else T.add(q_sum, qt)
        k_sum = kt if k_sum is None else T.add(k_sum, kt)
    logits = T.matmul(q_sum, T.permute(k_sum, (1, 0)))
    if layer.normalize:
        logits = T.scale(logits, layer.scale)
    return T.softmax_rows(logits)


def nested_attention_forward(layer: NestedAttention, x: Tensor) -> Tensor:
    if x.rank != 3 or x.shape[0] != layer.channels:
        raise ShapeError(
            f"attention expects {layer.channels} channels, got {x.shape}")
    d, h, w = x.shape
    gh, gw = layer.token_grid
    pooled = T.avg_pool_to_grid(x, gh, gw)

    attn = attention_map(layer, pooled)

    v_sum = None
    for _, _, v in layer.triplets:
        vt = _tokens(v(pooled))
        v_sum = vt if v_sum is None else T.add(v_sum, vt)

    context = T.matmul(attn, v_sum)                       # N x d
    context = T.permute(context, (1, 0))
    context = T.reshape(context, (d, gh, gw))
    out = T.add(layer.ffn(context), context)              # residual around FFN
    return T.bilinear_upsample(out, h, w)
