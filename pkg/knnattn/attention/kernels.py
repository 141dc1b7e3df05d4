#!/usr/bin/env python

import numpy as np

from knnattn.attention.selection import check_k
from knnattn.attention.selection import row_topk_mask
from knnattn.attention.selection import select_neighbors
from knnattn.numerics.matrix import MASK_SENTINEL
from knnattn.numerics.matrix import check_finite
from knnattn.numerics.matrix import matmul
from knnattn.numerics.matrix import row_sum
from knnattn.numerics.matrix import softmax_rows
from knnattn.utils.exceptions import ShapeError


def check_temperature(temperature):
    if not temperature > 0:
        raise ValueError("temperature must be positive, got {t}".format(t=temperature))


def score_scale(d, temperature=1.0):
    return float(np.sqrt(d)) * float(temperature)


def check_qkv(Q, K, V):
    Q = np.asarray(Q, dtype=np.float64)
    K = np.asarray(K, dtype=np.float64)
    V = np.asarray(V, dtype=np.float64)

    if Q.ndim < 2 or Q.shape[-1] != K.shape[-1] or K.shape[-2] != V.shape[-2]:
        raise ShapeError("attention", Q.shape, K.shape, V.shape)
    return Q, K, V


def project_qkv(X, weights):
    """
    Q = X W_Q, K = X W_K, V = X W_V.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.shape[-1] != weights.d_m:
        raise ShapeError("project_qkv", X.shape, weights.w_q.shape)

    return matmul(X, weights.w_q), matmul(X, weights.w_k), matmul(X, weights.w_v)


def attention_scores(Q, K, temperature=1.0):
    """
    Q K^T / (sqrt(d) t)
    """
    check_temperature(temperature)
    scores = matmul(Q, np.swapaxes(K, -1, -2)) / score_scale(Q.shape[-1], temperature)
    check_finite(scores, "attention scores")
    return scores


def masked_softmax(scores, mask):
    return softmax_rows(np.where(mask.selected, scores, MASK_SENTINEL))


def dense_attention(Q, K, V, temperature=1.0):
    """
    :return: (V_hat, A) with A = softmax(Q K^T / (sqrt(d) t)) and V_hat = A V
    """
    Q, K, V = check_qkv(Q, K, V)
    attention = softmax_rows(attention_scores(Q, K, temperature))
    return matmul(attention, V), attention


def masked_attention(Q, K, V, mask, temperature=1.0):
    """
    Softmax attention restricted to the entries selected by a given mask. With the mask of the current scores this is
    the fast k-NN attention, with a frozen mask it is the map differentiated by the gradient formulas.
    """
    Q, K, V = check_qkv(Q, K, V)
    scores = attention_scores(Q, K, temperature)
    if mask.shape != scores.shape:
        raise ShapeError("masked_attention", mask.shape, scores.shape)

    attention = masked_softmax(scores, mask)
    return matmul(attention, V), attention


def knn_attention_fast(Q, K, V, k, temperature=1.0):
    """
    softmax(T_k(Q K^T / sqrt(d))) V: full score matrix, row-wise top-k, the rest set to the mask sentinel.
    :return: (V_hat, A_masked, mask)
    """
    Q, K, V = check_qkv(Q, K, V)
    k = check_k(k, K.shape[-2])

    scores = attention_scores(Q, K, temperature)
    mask = row_topk_mask(scores, k)
    attention = masked_softmax(scores, mask)

    return matmul(attention, V), attention, mask


def knn_attention_slow(Q, K, V, k, selection_metric="dot", temperature=1.0):
    """
    Per query: pick k neighbors among the keys, softmax of the scaled dot products over those keys only, weighted sum
    of their values. Selected indices are kept in ascending order so the arithmetic follows the same path as the fast
    version.
    :return: (V_hat, list of selected index arrays per query)
    """
    Q, K, V = check_qkv(Q, K, V)
    if Q.ndim != 2:
        raise ShapeError("knn_attention_slow expects 2-D inputs", Q.shape)
    check_temperature(temperature)
    k = check_k(k, K.shape[0])

    scale = score_scale(Q.shape[-1], temperature)
    output = np.zeros((Q.shape[0], V.shape[1]), dtype=np.float64)
    neighbors = list()

    for i in range(Q.shape[0]):
        selected = select_neighbors(Q[i], K, k, metric=selection_metric, scale=scale)

        scores = matmul(Q[i:i + 1], K[selected].T) / scale
        check_finite(scores, "attention scores")
        weights = softmax_rows(scores)

        output[i] = matmul(weights, V[selected])[0]
        neighbors.append(selected)

    return output, neighbors


def row_entropy(attention):
    """
    Shannon entropy (nats) of every attention row, 0 log 0 = 0.
    """
    attention = np.asarray(attention, dtype=np.float64)
    positive = attention > 0
    terms = np.where(positive, attention * np.log(np.where(positive, attention, 1.0)), 0.0)
    return -row_sum(terms)
