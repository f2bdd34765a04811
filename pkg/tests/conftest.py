"""Shared fixtures and loop oracles for the test suite."""

import numpy as np

from lemore.model import ModelConfig


def small_config(**overrides):
    """Compact four-surface model used across the suite."""
    cfg = ModelConfig(
        input_size=(64, 64), num_classes=4, stem_width=6,
        stage_widths=[8, 12], stage_strides=[4, 8], blocks_per_stage=[1, 1],
        enabled_views=[["transverse"], ["transverse", "frontal", "lateral"]],
        token_grid=(4, 4), fusion_stages=[1, 2], seed=7)
    return cfg.with_overrides(**overrides) if overrides else cfg


def conv1x1_oracle(w, b, x):
    co, ci = w.shape
    _, h, wd = x.shape
    out = np.zeros((co, h, wd))
    for o in range(co):
        for i in range(ci):
            out[o] += w[o, i] * x[i]
        if b is not None:
            out[o] += b[o]
    return out


def dwconv_oracle(w, b, x, dilation, stride):
    c, h, wd = x.shape
    pad = dilation
    ho = (h + 2 * pad - dilation * 2 - 1) // stride + 1
    wo = (wd + 2 * pad - dilation * 2 - 1) // stride + 1
    out = np.zeros((c, ho, wo))
    for ch in range(c):
        for oi in range(ho):
            for oj in range(wo):
                acc = 0.0
                for ki in range(3):
                    for kj in range(3):
                        ii = oi * stride - pad + ki * dilation
                        jj = oj * stride - pad + kj * dilation
                        if 0 <= ii < h and 0 <= jj < wd:
                            acc += w[ch, ki, kj] * x[ch, ii, jj]
                out[ch, oi, oj] = acc + (b[ch] if b is not None else 0.0)
    return out


def conv3x3_oracle(w, b, x, stride):
    co, ci, _, _ = w.shape
    _, h, wd = x.shape
    ho = (h + 2 - 3) // stride + 1
    wo = (wd + 2 - 3) // stride + 1
    out = np.zeros((co, ho, wo))
    for o in range(co):
        for oi in range(ho):
            for oj in range(wo):
                acc = 0.0
                for i in range(ci):
                    for ki in range(3):
                        for kj in range(3):
                            ii = oi * stride - 1 + ki
                            jj = oj * stride - 1 + kj
                            if 0 <= ii < h and 0 <= jj < wd:
                                acc += w[o, i, ki, kj] * x[i, ii, jj]
                out[o, oi, oj] = acc + (b[o] if b is not None else 0.0)
    return out
