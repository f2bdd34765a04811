"""Nested attention bottleneck: step-by-step oracle and structural laws."""

import itertools

import numpy as np

from lemore import tensor as T
from lemore.attention import NestedAttention, attention_map, nested_attention_forward
from lemore.blocks import conv1x1_forward
from lemore.gradcheck import finite_diff_check
from lemore.tensor import Tensor


def rand(rng, shape, lo=-1.0, hi=1.0):
    return Tensor(rng.uniform(lo, hi, size=shape))


def reference_forward(layer, x):
    """Plain numpy re-derivation: explicit nine-pair sum, softmax, values,
    FFN with residual, upsample."""
    d, h, w = x.shape
    gh, gw = layer.token_grid
    pooled = T.avg_pool_to_grid(x, gh, gw)
    n = gh * gw

    def tokens(conv):
        return conv(pooled).data.reshape(d, n).T    # N x d

    logits = np.zeros((n, n))
    for (q, _, _), (_, k, _) in itertools.product(layer.triplets, layer.triplets):
        logits += tokens(q) @ tokens(k).T
    logits *= layer.scale
    e = np.exp(logits - logits.max(axis=1, keepdims=True))
    attn = e / e.sum(axis=1, keepdims=True)
    v_sum = sum(tokens(v) for (_, _, v) in layer.triplets)
    context = (attn @ v_sum).T.reshape(d, gh, gw)
    out = layer.ffn(Tensor(context)).data + context
    return T.bilinear_upsample(Tensor(out), h, w).data, attn


def test_zero_projections_uniform_attention():
    rng = np.random.default_rng(0)
    layer = NestedAttention(rng, 4, (2, 2))
    for q, k, v in layer.triplets:
        for conv in (q, k, v):
            conv.weight.data[...] = 0.0
            conv.bias.data[...] = 0.0
    x = rand(rng, (4, 4, 4))
    attn = attention_map(layer, T.avg_pool_to_grid(x, 2, 2))
    assert np.abs(attn.data - 0.25).max() < 1e-15
    # context is zero, so the output is the FFN bias response upsampled
    ffn_bias = layer.ffn(Tensor(np.zeros((4, 2, 2)))).data
    out = nested_attention_forward(layer, x)
    want = T.bilinear_upsample(Tensor(ffn_bias), 4, 4).data
    assert np.abs(out.data - want).max() < 1e-12


def test_single_token_grid():
    rng = np.random.default_rng(1)
    layer = NestedAttention(rng, 3, (1, 1))
    x = rand(rng, (3, 5, 5))
    pooled = T.avg_pool_to_grid(x, 1, 1)
    attn = attention_map(layer, pooled)
    assert attn.shape == (1, 1)
    assert abs(attn.data[0, 0] - 1.0) < 1e-15
    v_sum = np.zeros(3)
    for _, _, v in layer.triplets:
        v_sum += conv1x1_forward(v, pooled).data.reshape(3)
    out = nested_attention_forward(layer, x)
    # context equals summed values; residual plus FFN, constant over space
    want = layer.ffn(Tensor(v_sum.reshape(3, 1, 1))).data + v_sum.reshape(3, 1, 1)
    assert np.abs(out.data - want).max() < 1e-12


def test_step_by_step_oracle():
    rng = np.random.default_rng(2)
    layer = NestedAttention(rng, 8, (4, 4))
    x = rand(rng, (8, 8, 8))
    got = nested_attention_forward(layer, x).data
    want, attn = reference_forward(layer, x)
    assert np.abs(got - want).max() < 1e-10
    assert np.abs(attn.sum(axis=1) - 1.0).max() < 1e-9


def test_rows_sum_to_one():
    rng = np.random.default_rng(3)
    layer = NestedAttention(rng, 6, (3, 3))
    x = rand(rng, (6, 9, 9), -3, 3)
    attn = attention_map(layer, T.avg_pool_to_grid(x, 3, 3))
    assert np.abs(attn.data.sum(axis=1) - 1.0).max() < 1e-9


def test_factored_equals_nine_pair_sum():
    rng = np.random.default_rng(4)
    layer = NestedAttention(rng, 5, (3, 2))
    pooled = rand(rng, (5, 3, 2))
    n = 6

    def tokens(conv):
        return conv(pooled).data.reshape(5, n).T

    q_sum = sum(tokens(q) for (q, _, _) in layer.triplets)
    k_sum = sum(tokens(k) for (_, k, _) in layer.triplets)
    factored = q_sum @ k_sum.T
    pairwise = np.zeros((n, n))
    for (q, _, _), (_, k, _) in itertools.product(layer.triplets, layer.triplets):
        pairwise += tokens(q) @ tokens(k).T
    assert np.abs(factored - pairwise).max() < 1e-10


def test_triplet_permutation_invariance():
    rng = np.random.default_rng(5)
    layer = NestedAttention(rng, 4, (2, 2))
    x = rand(rng, (4, 4, 4))
    base = nested_attention_forward(layer, x).data
    for perm in itertools.permutations(range(3)):
        layer.triplets = [layer.triplets[i] for i in perm]
        out = nested_attention_forward(layer, x).data
        assert np.abs(out - base).max() < 1e-10


def test_resolution_independent_given_fixed_tokens():
    rng = np.random.default_rng(6)
    layer = NestedAttention(rng, 4, (2, 2))
    pooled = rand(rng, (4, 2, 2))
    # two inputs at different resolutions with identical pooled token maps
    x_small = Tensor(np.repeat(np.repeat(pooled.data, 2, axis=1), 2, axis=2))
    x_large = Tensor(np.repeat(np.repeat(pooled.data, 4, axis=1), 4, axis=2))
    assert np.abs(T.avg_pool_to_grid(x_small, 2, 2).data - pooled.data).max() < 1e-12
    out_small = nested_attention_forward(layer, x_small)
    out_large = nested_attention_forward(layer, x_large)
    # identical pre-upsample content: pooling each output back must agree
    back_s = T.avg_pool_to_grid(out_small, 2, 2).data
    back_l = T.avg_pool_to_grid(out_large, 2, 2).data
    assert out_small.shape == (4, 4, 4) and out_large.shape == (4, 8, 8)
    assert np.abs(back_s - back_l).max() < 1e-10


def test_unnormalized_variant_switch():
    rng = np.random.default_rng(7)
    raw = NestedAttention(rng, 4, (2, 2), normalize=False)
    pooled = rand(rng, (4, 2, 2))
    attn = attention_map(raw, pooled)
    # still a softmax map, but over the unscaled aggregation
    assert np.abs(attn.data.sum(axis=1) - 1.0).max() < 1e-9
    rng2 = np.random.default_rng(7)
    scaled = NestedAttention(rng2, 4, (2, 2), normalize=True)
    a2 = attention_map(scaled, pooled)
    assert np.abs(attn.data - a2.data).max() > 1e-6


def test_gradients_end_to_end():
    rng = np.random.default_rng(8)
    layer = NestedAttention(rng, 4, (2, 2))
    x = rand(rng, (4, 4, 4))
    err = finite_diff_check(lambda t: T.mean_all(nested_attention_forward(layer, t)), x)
    assert err < 1e-4
