"""Layer forwards against direct-convolution loop oracles."""

import numpy as np
import pytest

from lemore import tensor as T
from lemore.blocks import (BatchNorm, ChannelAttention, Conv1x1, Conv3x3,
                           DepthwiseConv3x3, FeedForwardNetwork,
                           batchnorm_forward)
from conftest import conv1x1_oracle, conv3x3_oracle, dwconv_oracle
from lemore.errors import ShapeError
from lemore.tensor import Tensor


def rand(rng, shape, lo=-1.0, hi=1.0):
    return Tensor(rng.uniform(lo, hi, size=shape))


class TestConv1x1:
    def test_identity_weight(self):
        rng = np.random.default_rng(0)
        x = rand(rng, (3, 4, 5))
        layer = Conv1x1(Tensor(np.eye(3)), Tensor(np.zeros(3)))
        assert np.abs(layer(x).data - x.data).max() < 1e-15

    def test_channel_sum(self):
        x = Tensor(np.stack([np.full((2, 2), 1.0), np.full((2, 2), 2.0)]))
        layer = Conv1x1(Tensor([[1.0, 1.0]]))
        assert np.abs(layer(x).data - 3.0).max() == 0.0

    def test_quadruple_loop_oracle(self):
        rng = np.random.default_rng(1)
        layer = Conv1x1.create(rng, 4, 3)
        x = rand(rng, (4, 5, 6))
        want = conv1x1_oracle(layer.weight.data, layer.bias.data, x.data)
        assert np.abs(layer(x).data - want).max() < 1e-12

    def test_matmul_equivalence(self):
        rng = np.random.default_rng(2)
        layer = Conv1x1.create(rng, 5, 2, bias=False)
        x = rand(rng, (5, 3, 4))
        via_matmul = (layer.weight.data @ x.data.reshape(5, -1)).reshape(2, 3, 4)
        assert np.abs(layer(x).data - via_matmul).max() < 1e-12

    def test_linearity(self):
        rng = np.random.default_rng(3)
        layer = Conv1x1.create(rng, 3, 3, bias=False)
        x, y = rand(rng, (3, 4, 4)), rand(rng, (3, 4, 4))
        a, b = 2.5, -1.25
        lhs = layer(Tensor(a * x.data + b * y.data)).data
        rhs = a * layer(x).data + b * layer(y).data
        assert np.abs(lhs - rhs).max() < 1e-10

    def test_channel_mismatch(self):
        rng = np.random.default_rng(4)
        layer = Conv1x1.create(rng, 4, 3)
        with pytest.raises(ShapeError):
            layer(rand(rng, (5, 2, 2)))


class TestDepthwise:
    def test_delta_kernel_identity(self):
        rng = np.random.default_rng(5)
        w = np.zeros((3, 3, 3))
        w[:, 1, 1] = 1.0
        layer = DepthwiseConv3x3(Tensor(w), Tensor(np.zeros(3)))
        x = rand(rng, (3, 6, 6))
        assert np.abs(layer(x).data - x.data).max() < 1e-15

    def test_ones_kernel_interior(self):
        layer = DepthwiseConv3x3(Tensor(np.ones((1, 3, 3))))
        x = Tensor(np.full((1, 5, 5), 2.0))
        out = layer(x)
        assert abs(out.data[0, 2, 2] - 18.0) < 1e-12  # 9 * 2 inside

    @pytest.mark.parametrize("dilation,stride,size", [(1, 1, 6), (2, 1, 7),
                                                      (1, 2, 7), (2, 2, 9)])
    def test_sliding_window_oracle(self, dilation, stride, size):
        rng = np.random.default_rng(6)
        layer = DepthwiseConv3x3.create(rng, 2, dilation=dilation, stride=stride)
        x = rand(rng, (2, size, size))
        want = dwconv_oracle(layer.weight.data, layer.bias.data, x.data,
                             dilation, stride)
        got = layer(x).data
        assert got.shape == want.shape
        assert np.abs(got - want).max() < 1e-12

    def test_no_channel_mixing(self):
        rng = np.random.default_rng(7)
        layer = DepthwiseConv3x3.create(rng, 4)
        x = rand(rng, (4, 5, 5))
        base = layer(x).data
        bumped = x.data.copy()
        bumped[2] += 1.0
        delta = layer(Tensor(bumped)).data - base
        assert np.abs(delta[[0, 1, 3]]).max() == 0.0
        assert np.abs(delta[2]).max() > 0.0


class TestConv3x3:
    @pytest.mark.parametrize("stride", [1, 2])
    def test_direct_oracle(self, stride):
        rng = np.random.default_rng(8)
        layer = Conv3x3.create(rng, 3, 4, stride=stride)
        x = rand(rng, (3, 7, 8))
        want = conv3x3_oracle(layer.weight.data, layer.bias.data, x.data, stride)
        got = layer(x).data
        assert got.shape == want.shape
        assert np.abs(got - want).max() < 1e-12


class TestBatchNorm:
    def test_eval_identity_stats(self):
        rng = np.random.default_rng(9)
        layer = BatchNorm(3)
        x = rand(rng, (3, 4, 4))
        out = batchnorm_forward(layer, x, "eval")
        assert np.abs(out.data - x.data).max() < 1e-5  # epsilon effect only

    def test_train_normalizes(self):
        # wide range so the epsilon term stays under the variance tolerance
        rng = np.random.default_rng(10)
        layer = BatchNorm(2)
        x = rand(rng, (2, 8, 8), -10, 10)
        out = batchnorm_forward(layer, x, "train", update_running=False)
        assert np.abs(out.data.mean(axis=(1, 2))).max() < 1e-9
        assert np.abs(out.data.var(axis=(1, 2)) - 1.0).max() < 1e-6

    def test_formula_oracle(self):
        rng = np.random.default_rng(11)
        layer = BatchNorm(2)
        layer.gamma.data[...] = [2.0, 0.5]
        layer.beta.data[...] = [-1.0, 3.0]
        x = rand(rng, (2, 3, 4))
        out = batchnorm_forward(layer, x, "train", update_running=False)
        mu = x.data.mean(axis=(1, 2), keepdims=True)
        var = x.data.var(axis=(1, 2), keepdims=True)
        want = (x.data - mu) / np.sqrt(var + layer.epsilon)
        want = want * np.array([2.0, 0.5])[:, None, None] + \
            np.array([-1.0, 3.0])[:, None, None]
        assert np.abs(out.data - want).max() < 1e-12

    def test_running_stats_update(self):
        rng = np.random.default_rng(12)
        layer = BatchNorm(2)
        x = rand(rng, (2, 4, 4), 1.0, 2.0)
        batchnorm_forward(layer, x, "train")
        m = layer.momentum
        n = 16
        want_mean = m * x.data.mean(axis=(1, 2))
        want_var = (1 - m) * 1.0 + m * x.data.var(axis=(1, 2)) * n / (n - 1)
        assert np.abs(layer.running_mean.data - want_mean).max() < 1e-12
        assert np.abs(layer.running_var.data - want_var).max() < 1e-12

    def test_degenerate_single_pixel(self):
        layer = BatchNorm(2)
        x = Tensor(np.array([[[3.0]], [[4.0]]]))
        out = batchnorm_forward(layer, x, "train")
        assert np.isfinite(out.data).all()


class TestChannelAttention:
    def test_zero_logits_halve(self):
        rng = np.random.default_rng(13)
        layer = ChannelAttention.create(rng, 8, reduction=2)
        layer.reduce.weight.data[...] = 0.0
        layer.reduce.bias.data[...] = 0.0
        layer.expand.weight.data[...] = 0.0
        layer.expand.bias.data[...] = 0.0
        x = rand(rng, (8, 4, 4))
        out = layer(x)
        assert np.abs(out.data - 0.5 * x.data).max() < 1e-15

    def test_saturated_gate_passthrough(self):
        rng = np.random.default_rng(14)
        layer = ChannelAttention.create(rng, 8, reduction=2)
        layer.expand.weight.data[...] = 0.0
        layer.expand.bias.data[...] = 40.0
        x = rand(rng, (8, 4, 4))
        assert np.abs(layer(x).data - x.data).max() < 1e-9

    def test_composition_oracle(self):
        rng = np.random.default_rng(15)
        layer = ChannelAttention.create(rng, 8, reduction=4)
        x = rand(rng, (8, 4, 4))
        pooled = x.data.mean(axis=(1, 2), keepdims=True)
        z = conv1x1_oracle(layer.reduce.weight.data, layer.reduce.bias.data, pooled)
        z = np.maximum(z, 0.0)
        z = conv1x1_oracle(layer.expand.weight.data, layer.expand.bias.data, z)
        gate = 1.0 / (1.0 + np.exp(-z))
        assert np.abs(layer(x).data - x.data * gate).max() < 1e-12

    def test_gate_constant_over_space_and_in_unit_interval(self):
        rng = np.random.default_rng(16)
        for trial in range(5):
            layer = ChannelAttention.create(rng, 6, reduction=2)
            x = rand(rng, (6, 5, 7), 0.1, 2.0)
            ratio = layer(x).data / x.data
            spread = ratio.max(axis=(1, 2)) - ratio.min(axis=(1, 2))
            assert spread.max() < 1e-12
            assert (ratio > 0.0).all() and (ratio < 1.0).all()


class TestFFN:
    def test_zero_weights_zero_output(self):
        rng = np.random.default_rng(17)
        layer = FeedForwardNetwork.create(rng, 4)
        for conv in (layer.expand, layer.project):
            conv.weight.data[...] = 0.0
            conv.bias.data[...] = 0.0
        layer.dw.weight.data[...] = 0.0
        layer.dw.bias.data[...] = 0.0
        x = rand(rng, (4, 5, 5))
        assert np.abs(layer(x).data).max() == 0.0

    def test_identity_composition(self):
        # expand stacks [I; I], delta depthwise, project averages back
        d = 3
        expand_w = np.vstack([np.eye(d), np.eye(d)])
        dw_w = np.zeros((2 * d, 3, 3))
        dw_w[:, 1, 1] = 1.0
        project_w = np.hstack([np.eye(d), np.eye(d)]) * 0.5
        layer = FeedForwardNetwork(
            Conv1x1(Tensor(expand_w), Tensor(np.zeros(2 * d))),
            DepthwiseConv3x3(Tensor(dw_w), Tensor(np.zeros(2 * d))),
            Conv1x1(Tensor(project_w), Tensor(np.zeros(d))))
        rng = np.random.default_rng(18)
        x = rand(rng, (d, 4, 4), 0.05, 1.0)  # positive: relus pass through
        assert np.abs(layer(x).data - x.data).max() < 1e-12

    def test_composition_oracle(self):
        rng = np.random.default_rng(19)
        layer = FeedForwardNetwork.create(rng, 4)
        x = rand(rng, (4, 5, 5))
        h = conv1x1_oracle(layer.expand.weight.data, layer.expand.bias.data, x.data)
        h = np.maximum(h, 0.0)
        h = dwconv_oracle(layer.dw.weight.data, layer.dw.bias.data, h, 1, 1)
        h = np.maximum(h, 0.0)
        want = conv1x1_oracle(layer.project.weight.data, layer.project.bias.data, h)
        assert np.abs(layer(x).data - want).max() < 1e-12

    def test_expansion_factor_enforced(self):
        rng = np.random.default_rng(20)
        with pytest.raises(ShapeError):
            FeedForwardNetwork(Conv1x1.create(rng, 4, 12),
                               DepthwiseConv3x3.create(rng, 12),
                               Conv1x1.create(rng, 12, 4))


class TestKernelOracleFuzz:
    """Randomized instance sweeps used by the acceptance gate."""

    def test_conv1x1_hundred_instances(self):
        rng = np.random.default_rng(21)
        for _ in range(100):
            ci, co = rng.integers(1, 6, 2)
            h, w = rng.integers(1, 7, 2)
            layer = Conv1x1.create(rng, ci, co)
            x = rand(rng, (ci, h, w))
            want = conv1x1_oracle(layer.weight.data, layer.bias.data, x.data)
            assert np.abs(layer(x).data - want).max() < 1e-10

    def test_dwconv_hundred_instances(self):
        rng = np.random.default_rng(22)
        for _ in range(100):
            c = int(rng.integers(1, 5))
            dilation = int(rng.integers(1, 3))
            stride = int(rng.integers(1, 3))
            size = int(rng.integers(2 * dilation + 1, 9))
            layer = DepthwiseConv3x3.create(rng, c, dilation=dilation,
                                            stride=stride)
            x = rand(rng, (c, size, size))
            want = dwconv_oracle(layer.weight.data, layer.bias.data, x.data,
                                 dilation, stride)
            assert np.abs(layer(x).data - want).max() < 1e-10
