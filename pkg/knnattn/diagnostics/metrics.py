#!/usr/bin/env python

import numpy as np

from knnattn.numerics.matrix import frobenius_norm
from knnattn.numerics.matrix import matmul
from knnattn.numerics.matrix import population_std
from knnattn.numerics.matrix import row_sum
from knnattn.utils.exceptions import ShapeError
from knnattn.utils.exceptions import ZeroNormError


def cos_sim(tokens):
    """
    Mean cosine similarity over ordered token pairs i != j.
    """
    tokens = np.asarray(tokens, dtype=np.float64)
    n = tokens.shape[0]
    if n < 2:
        raise ShapeError("cos_sim needs at least two tokens", tokens.shape)

    norms = np.sqrt(row_sum(tokens * tokens))
    zero = np.flatnonzero(norms == 0)
    if zero.size:
        raise ZeroNormError("token", int(zero[0]))

    unit = tokens / norms[:, None]
    similarities = matmul(unit, unit.T)
    off_diagonal = float(np.sum(similarities) - np.trace(similarities))

    return float(np.clip(off_diagonal / (n * (n - 1)), -1.0, 1.0))


def attn_std(attention_heads):
    """
    Population std of every attention row, averaged over rows, then over heads.
    """
    attention = np.asarray(attention_heads, dtype=np.float64)
    if attention.ndim == 2:
        attention = attention[None]

    per_row = population_std(attention, axis=-1)
    return float(np.mean(np.mean(per_row, axis=-1)))


def branch_ratio(branch_out, block_in):
    """
    ||f(t)|| / ||t|| with Frobenius norms.
    """
    denominator = frobenius_norm(block_in)
    if denominator == 0:
        raise ZeroNormError("block input")
    return frobenius_norm(branch_out) / denominator


def grid_distances(rows, cols):
    """
    Euclidean distances between patch centers in grid units, patches numbered row-major.
    """
    r, c = np.divmod(np.arange(rows * cols), cols)
    dr = r[:, None] - r[None, :]
    dc = c[:, None] - c[None, :]
    return np.sqrt((dr * dr + dc * dc).astype(np.float64))


def nonlocality(attention_heads, grid, cls_present=False):
    """
    Attention-weighted distance between each query patch and its keys, averaged over query patches per head, then
    over heads. The CLS token (index 0 when present) has no position: it is dropped from queries and keys and the
    remaining spatial mass of every row is renormalized. Rows without spatial mass are left out of the average.
    :return: (per-head values, layer mean)
    """
    attention = np.asarray(attention_heads, dtype=np.float64)
    if attention.ndim == 2:
        attention = attention[None]

    rows, cols = grid
    offset = 1 if cls_present else 0
    if attention.shape[-1] != rows * cols + offset or attention.shape[-2] != attention.shape[-1]:
        raise ShapeError("nonlocality: grid {rows}x{cols} (cls {cls}) inconsistent with attention".format(
            rows=rows, cols=cols, cls=cls_present), attention.shape)

    spatial = attention[:, offset:, offset:]
    mass = row_sum(spatial)
    distances = grid_distances(rows, cols)

    per_head = list()
    for h in range(spatial.shape[0]):
        keep = mass[h] > 0
        if not np.any(keep):
            per_head.append(0.0)
            continue
        normalized = spatial[h][keep] / mass[h][keep][:, None]
        per_query = row_sum(normalized * distances[keep])
        per_head.append(float(np.mean(per_query)))

    return per_head, float(np.mean(per_head))
