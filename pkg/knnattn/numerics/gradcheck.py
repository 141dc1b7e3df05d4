#!/usr/bin/env python

import numpy as np

from knnattn.utils.exceptions import NonFiniteError


def finite_diff_entry(f, at, index, h=1e-5):
    """
    Central difference of f along a single coordinate of its argument. f may be scalar or array valued.
    :param f: function of an array shaped like `at`
    :param at: point of evaluation, left untouched
    :param index: coordinate tuple to perturb
    :param h: step, > 0
    :return: (f(x + h e) - f(x - h e)) / 2h
    """
    if not h > 0:
        raise ValueError("finite difference step must be positive, got {h}".format(h=h))

    x = np.array(at, dtype=np.float64, copy=True)
    original = x[index]

    x[index] = original + h
    f_plus = np.asarray(f(x), dtype=np.float64)
    x[index] = original - h
    f_minus = np.asarray(f(x), dtype=np.float64)

    if not (np.all(np.isfinite(f_plus)) and np.all(np.isfinite(f_minus))):
        raise NonFiniteError("finite difference evaluation", index)

    return (f_plus - f_minus) / (2.0 * h)


def finite_diff_grad(f, at, h=1e-5, indices=None):
    """
    Gradient of a scalar function by central differences, entry by entry.
    :param indices: optional iterable of coordinates to check, the rest of the result stays 0
    """
    at = np.asarray(at, dtype=np.float64)
    grad = np.zeros(at.shape, dtype=np.float64)

    if indices is None:
        indices = np.ndindex(at.shape)

    for index in indices:
        index = tuple(index)
        grad[index] = float(finite_diff_entry(f, at, index, h=h))
    return grad


def relative_error(analytic, numeric):
    """
    Norm-wise relative error max|a - n| / max(max|a|, max|n|). Zero when both are exactly zero.
    """
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)

    difference = float(np.max(np.abs(analytic - numeric))) if analytic.size else 0.0
    scale = max(float(np.max(np.abs(analytic))) if analytic.size else 0.0,
                float(np.max(np.abs(numeric))) if numeric.size else 0.0)

    if scale == 0.0:
        return 0.0 if difference == 0.0 else float("inf")
    return difference / scale
