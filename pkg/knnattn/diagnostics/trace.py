#!/usr/bin/env python

import numpy as np

from knnattn.utils.exceptions import ShapeError


class LayerTrace(object):
    """
    What one transformer block saw and produced for a single image.
    :param tokens: (n, d_m) tokens entering the block
    :param attention: (heads, n, n) attention matrices
    :param attn_branch: (n, d_m) output of the attention sub-block before the residual add
    :param ffn_input: (n, d_m) tokens entering the FFN sub-block
    :param ffn_branch: (n, d_m) output of the FFN sub-block before the residual add
    """
    def __init__(self, tokens, attention, attn_branch, ffn_input, ffn_branch):
        self.tokens = np.asarray(tokens, dtype=np.float64)
        self.attention = np.asarray(attention, dtype=np.float64)
        self.attn_branch = np.asarray(attn_branch, dtype=np.float64)
        self.ffn_input = np.asarray(ffn_input, dtype=np.float64)
        self.ffn_branch = np.asarray(ffn_branch, dtype=np.float64)

        n = self.tokens.shape[0]
        if self.attention.ndim != 3 or self.attention.shape[1:] != (n, n):
            raise ShapeError("layer trace attention", self.attention.shape, (n, n))
        for branch in (self.attn_branch, self.ffn_input, self.ffn_branch):
            if branch.shape != self.tokens.shape:
                raise ShapeError("layer trace branch", branch.shape, self.tokens.shape)

    @property
    def heads(self):
        return self.attention.shape[0]


class AttentionTrace(object):
    def __init__(self, layers, grid, cls_present=False):
        self.layers = list(layers)
        self.grid = (int(grid[0]), int(grid[1]))
        self.cls_present = bool(cls_present)

        for l, layer in enumerate(self.layers):
            if layer.tokens.shape[0] != self.n:
                raise ShapeError("grid {grid} (cls {cls}) vs layer {l} tokens".format(
                    grid=self.grid, cls=self.cls_present, l=l), (self.n,), layer.tokens.shape)
            row_sums = np.sum(layer.attention, axis=-1)
            assert np.all(np.abs(row_sums - 1.0) <= 1e-10), "attention of layer {l} is not row-stochastic".format(l=l)

    def __str__(self):
        return "AttentionTrace: {num} layers, grid {rows}x{cols}, cls {cls}".format(
            num=len(self.layers), rows=self.grid[0], cols=self.grid[1], cls=self.cls_present)

    @property
    def n(self):
        return self.grid[0] * self.grid[1] + (1 if self.cls_present else 0)
