#!/usr/bin/env python

import numpy as np

from knnattn.utils.exceptions import EmptyAttentionRowError
from knnattn.utils.exceptions import NonFiniteError
from knnattn.utils.exceptions import ShapeError

# most negative finite float64: exp() of it after the max shift underflows to exactly 0, but unlike -inf it never
# turns (sentinel - sentinel) into NaN
MASK_SENTINEL = np.finfo(np.float64).min


def identity(n):
    return np.eye(n, dtype=np.float64)


def check_finite(matrix, what="matrix"):
    finite = np.isfinite(matrix)
    if not np.all(finite):
        index = tuple(int(i) for i in np.argwhere(~finite)[0])
        raise NonFiniteError(what, index)


def matmul(a, b):
    """
    Matrix product over the last two axes (leading axes broadcast). Every output entry is accumulated as
    ((a_0 b_0 + a_1 b_1) + a_2 b_2) + ... in ascending inner index, using elementwise IEEE operations only, so the
    value of an entry does not depend on the shape of the product it is part of.
    :param a: (..., m, k)
    :param b: (..., k, n)
    :return: (..., m, n)
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)

    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError("matmul", a.shape, b.shape)

    try:
        lead = np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeError("matmul", a.shape, b.shape)

    out = np.zeros(lead + (a.shape[-2], b.shape[-1]), dtype=np.float64)
    for p in range(a.shape[-1]):
        out += a[..., :, p, None] * b[..., None, p, :]
    return out


def row_sum(matrix):
    """
    Sums along the last axis in ascending column order. Appending exact zeros anywhere in a row leaves the result
    bitwise unchanged, which np.sum (pairwise) does not guarantee.
    """
    matrix = np.asarray(matrix, dtype=np.float64)
    total = np.zeros(matrix.shape[:-1], dtype=np.float64)
    for j in range(matrix.shape[-1]):
        total += matrix[..., j]
    return total


def softmax_rows(matrix):
    """
    Row-wise softmax exp(x - rowmax) / sum. Entries equal to MASK_SENTINEL get weight exactly 0.
    """
    matrix = np.asarray(matrix, dtype=np.float64)
    check_finite(matrix, "attention scores")

    masked = matrix == MASK_SENTINEL
    empty = np.all(masked, axis=-1)
    if np.any(empty):
        row = tuple(int(i) for i in np.argwhere(empty)[0])
        raise EmptyAttentionRowError(row[0] if len(row) == 1 else row)

    row_max = np.max(np.where(masked, -np.inf, matrix), axis=-1, keepdims=True)
    shifted = np.where(masked, 0.0, matrix - row_max)
    exps = np.where(masked, 0.0, np.exp(shifted))

    return exps / row_sum(exps)[..., None]


def frobenius_norm(matrix):
    matrix = np.asarray(matrix, dtype=np.float64)
    return float(np.sqrt(np.sum(matrix * matrix)))


def row_norm(matrix, i):
    row = np.asarray(matrix, dtype=np.float64)[i]
    return float(np.sqrt(np.sum(row * row)))


def mean(values):
    return float(np.mean(np.asarray(values, dtype=np.float64)))


def population_std(values, axis=None):
    # divides by n, not n - 1
    return np.std(np.asarray(values, dtype=np.float64), axis=axis, ddof=0)
