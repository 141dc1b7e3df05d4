#!/usr/bin/env python

import numpy as np

from knnattn.attention.kernels import attention_scores
from knnattn.attention.kernels import check_qkv
from knnattn.attention.kernels import masked_softmax
from knnattn.attention.kernels import project_qkv
from knnattn.attention.kernels import score_scale
from knnattn.attention.selection import TopKMask
from knnattn.numerics.matrix import matmul
from knnattn.numerics.matrix import row_sum
from knnattn.utils.exceptions import DistributionError
from knnattn.utils.exceptions import ShapeError


def weighted_covariance(X, weights):
    """
    Covariance of the patch rows under probability weights a:
        Var_a(x) = sum_i a_i x_i^T x_i - (sum_i a_i x_i)^T (sum_i a_i x_i)
    :param X: (n, d_m) patches
    :param weights: (n,) probability vector
    :return: (d_m, d_m) symmetric positive semidefinite matrix
    """
    X = np.asarray(X, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64).reshape(-1)

    if X.ndim != 2 or weights.shape[0] != X.shape[0]:
        raise ShapeError("weighted_covariance", X.shape, weights.shape)
    if np.any(weights < 0) or abs(float(np.sum(weights)) - 1.0) > 1e-10:
        raise DistributionError("weights must be nonnegative and sum to 1, got sum {total}".format(
            total=float(np.sum(weights))))

    first_moment = matmul(weights[None, :], X)
    second_moment = matmul(X.T * weights[None, :], X)
    covariance = second_moment - matmul(first_moment.T, first_moment)

    return 0.5 * (covariance + covariance.T)


def covariance_traces(X, attention):
    """
    tr Var_{a_l}(x) for every attention row at once: sum_i a_li |x_i|^2 - |sum_i a_li x_i|^2.
    :param X: (n, d_m) patches
    :param attention: (m, n) rows of probability weights
    :return: (m,)
    """
    X = np.asarray(X, dtype=np.float64)
    attention = np.asarray(attention, dtype=np.float64)
    if X.ndim != 2 or attention.ndim != 2 or attention.shape[1] != X.shape[0]:
        raise ShapeError("covariance_traces", X.shape, attention.shape)

    second_moment = matmul(attention, row_sum(X * X)[:, None])[:, 0]
    first_moment = matmul(attention, X)
    return second_moment - row_sum(first_moment * first_moment)


def _attention_row(X, weights, l, mask, temperature):
    X = np.asarray(X, dtype=np.float64)
    if not 0 <= l < X.shape[0]:
        raise IndexError("query row {l} out of range for {n} patches".format(l=l, n=X.shape[0]))

    Q, K, _ = project_qkv(X, weights)
    scores = attention_scores(Q, K, temperature)
    if mask is None:
        mask = TopKMask.full(scores.shape)
    attention = masked_softmax(scores, mask)

    return X, Q, attention[l]


def lemma1_analytic_grad(X, weights, l, entry, mask=None, temperature=1.0):
    """
    Derivative of the l-th output row with respect to W_Q[i, j], the mask held fixed:
        dV_l / dW_Q[i, j] = x_li / (sqrt(d) t) * W_K[:, j]^T Var_{a_l}(x) W_V
    where a_l is the attention row of query l, renormalized over its selected patches.
    :param entry: (i, j) with 0 <= i < d_m, 0 <= j < d
    :return: (1, d)
    """
    i, j = entry
    X, _, attention_row = _attention_row(X, weights, l, mask, temperature)

    covariance = weighted_covariance(X, attention_row)
    coefficient = X[l, i] / score_scale(weights.d, temperature)
    column = weights.w_k[:, j][None, :]

    return coefficient * matmul(column, matmul(covariance, weights.w_v))


def lemma1_analytic_grad_wk(X, weights, l, entry, mask=None, temperature=1.0):
    """
    The W_K counterpart, by the symmetry of the score in Q and K:
        dV_l / dW_K[i, j] = q_lj / (sqrt(d) t) * Var_{a_l}(x)[i, :] W_V
    """
    i, j = entry
    X, Q, attention_row = _attention_row(X, weights, l, mask, temperature)

    covariance = weighted_covariance(X, attention_row)
    coefficient = Q[l, j] / score_scale(weights.d, temperature)

    return coefficient * matmul(covariance[i:i + 1, :], weights.w_v)


def attention_backward(Q, K, V, mask, upstream, temperature=1.0, attention=None):
    """
    Reverse-mode derivatives of masked-softmax attention with the mask held fixed. Non-selected weights are exact
    zeros and pass no gradient.
    :param mask: TopKMask or None for dense attention
    :param upstream: dL/dV_hat, shaped like the attention output
    :param attention: the forward attention matrix if already available
    :return: (dQ, dK, dV)
    """
    Q, K, V = check_qkv(Q, K, V)
    upstream = np.asarray(upstream, dtype=np.float64)

    if upstream.shape != Q.shape[:-1] + (V.shape[-1],):
        raise ShapeError("attention_backward", upstream.shape, Q.shape[:-1] + (V.shape[-1],))

    if attention is None:
        scores = attention_scores(Q, K, temperature)
        if mask is None:
            mask = TopKMask.full(scores.shape)
        attention = masked_softmax(scores, mask)

    grad_v = matmul(np.swapaxes(attention, -1, -2), upstream)
    grad_attention = matmul(upstream, np.swapaxes(V, -1, -2))

    # softmax backward, restricted to the selected entries through attention == 0 elsewhere
    grad_scores = attention * (grad_attention - row_sum(attention * grad_attention)[..., None])
    grad_scores = grad_scores / score_scale(Q.shape[-1], temperature)

    grad_q = matmul(grad_scores, K)
    grad_k = matmul(np.swapaxes(grad_scores, -1, -2), Q)

    return grad_q, grad_k, grad_v


def projection_grads(X, grad_q, grad_k, grad_v):
    """
    Chain rule through Q = X W_Q etc.: dW = X^T dQ.
    """
    X_t = np.swapaxes(np.asarray(X, dtype=np.float64), -1, -2)
    return matmul(X_t, grad_q), matmul(X_t, grad_k), matmul(X_t, grad_v)
