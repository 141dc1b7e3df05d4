#!/usr/bin/env python

import math

import numpy as np

from knnattn.numerics.matrix import check_finite
from knnattn.numerics.matrix import matmul
from knnattn.numerics.matrix import row_sum
from knnattn.utils.exceptions import SelectionError

K_RULES = {
    "half": 1.0 / 2.0,
    "two_thirds": 2.0 / 3.0,
    "four_fifths": 4.0 / 5.0,
}


def check_k(k, n):
    if isinstance(k, bool) or int(k) != k or not 1 <= k <= n:
        raise SelectionError(k, n)
    return int(k)


def choose_k(n, rule="half"):
    """
    k for a stage with n tokens: about n/2 for plain patch tokens, 2n/3 or 4n/5 when tokens already mix
    information during their generation.
    """
    assert rule in K_RULES, "Unknown k rule: {rule}".format(rule=rule)
    return min(n, max(1, int(math.ceil(n * K_RULES[rule] - 1e-12))))


class TopKMask(object):
    """
    Boolean selection over the last axis of a score tensor, exactly k entries per row.
    """
    def __init__(self, selected, k):
        self.selected = np.asarray(selected, dtype=bool)
        self.k = k

        assert np.all(np.count_nonzero(self.selected, axis=-1) == k), "every row must select exactly k entries"

    def __str__(self):
        return "TopKMask(k={k}, shape={shape})".format(k=self.k, shape=self.selected.shape)

    def __eq__(self, other):
        if not isinstance(other, TopKMask):
            return False
        return self.k == other.k and np.array_equal(self.selected, other.selected)

    def __ne__(self, other):
        return not self.__eq__(other)

    @property
    def shape(self):
        return self.selected.shape

    def row_indices(self, i):
        return np.flatnonzero(self.selected[i])

    def indices(self):
        assert self.selected.ndim == 2
        return [self.row_indices(i) for i in range(self.selected.shape[0])]

    @staticmethod
    def full(shape):
        return TopKMask(np.ones(shape, dtype=bool), shape[-1])


def descending_order(scores):
    # stable sort of the negated scores: among equal scores the lowest column index comes first
    return np.argsort(-scores, axis=-1, kind="stable")


def row_topk_mask(scores, k):
    """
    Row-wise top-k selection.
    :param scores: (..., n, n) finite scores
    :param k: 1 <= k <= n, never clamped
    :return: TopKMask with the k largest entries of every row, ties broken by lowest column index
    """
    scores = np.asarray(scores, dtype=np.float64)
    k = check_k(k, scores.shape[-1])
    check_finite(scores, "attention scores")

    top = descending_order(scores)[..., :k]
    selected = np.zeros(scores.shape, dtype=bool)
    np.put_along_axis(selected, top, True, axis=-1)

    return TopKMask(selected, k)


def selection_margin(scores, k):
    """
    Smallest gap between the k-th and (k+1)-th largest score over all rows. A small margin means a tiny perturbation
    can change the selection.
    """
    scores = np.asarray(scores, dtype=np.float64)
    n = scores.shape[-1]
    k = check_k(k, n)
    if k == n:
        return float("inf")

    ordered = -np.sort(-scores, axis=-1)
    return float(np.min(ordered[..., k - 1] - ordered[..., k]))


def select_neighbors(query, keys, k, metric="dot", scale=1.0):
    """
    Neighbors of a single query among the keys, returned in ascending index order.
    :param query: (d,) query vector
    :param keys: (n, d) key matrix
    :param metric: "dot" ranks by largest scaled dot product, "euclidean" by smallest distance
    """
    k = check_k(k, keys.shape[0])

    if metric == "dot":
        scores = matmul(query[None, :], keys.T)[0] / scale
        order = np.argsort(-scores, kind="stable")
    elif metric == "euclidean":
        difference = keys - query[None, :]
        distances = row_sum(difference * difference)
        order = np.argsort(distances, kind="stable")
    else:
        raise ValueError("Unknown selection metric: {metric}".format(metric=metric))

    return np.sort(order[:k])
