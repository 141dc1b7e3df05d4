#!/usr/bin/env python

import numpy as np

from knnattn.utils.config import ConfigBase
from knnattn.utils.exceptions import ShapeError

SELECTION_METRICS = ("dot", "euclidean")


class AttentionConfig(ConfigBase):
    FIELDS = (
        ("n", 16),
        ("d", 8),
        ("d_m", 16),
        ("heads", 2),
        ("k", 8),
        ("selection_metric", "dot"),
        ("temperature", 1.0),
    )

    def validate(self):
        self.require(self.n >= 1, "n must be positive")
        self.require(1 <= self.k <= self.n, "k={k} out of range 1..{n}".format(k=self.k, n=self.n))
        self.require(self.temperature > 0, "temperature must be positive")
        self.require(self.d_m == self.heads * self.d, "d_m must equal heads x d")
        self.require(self.selection_metric in SELECTION_METRICS,
                     "selection_metric must be one of {metrics}".format(metrics=", ".join(SELECTION_METRICS)))


class ProjectionWeights(object):
    def __init__(self, w_q, w_k, w_v):
        self.w_q = np.ascontiguousarray(w_q, dtype=np.float64)
        self.w_k = np.ascontiguousarray(w_k, dtype=np.float64)
        self.w_v = np.ascontiguousarray(w_v, dtype=np.float64)

        if self.w_q.ndim != 2 or self.w_q.shape != self.w_k.shape or self.w_q.shape[0] != self.w_v.shape[0]:
            raise ShapeError("projection weights", self.w_q.shape, self.w_k.shape, self.w_v.shape)

    def __str__(self):
        return "ProjectionWeights: W_Q {q}, W_K {k}, W_V {v}".format(q=self.w_q.shape, k=self.w_k.shape,
                                                                       v=self.w_v.shape)

    @property
    def d_m(self):
        return self.w_q.shape[0]

    @property
    def d(self):
        return self.w_q.shape[1]

    def conforms(self, config):
        return self.w_q.shape == (config.d_m, config.d) and self.w_v.shape == (config.d_m, config.d)

    def replace(self, w_q=None, w_k=None, w_v=None):
        return ProjectionWeights(self.w_q if w_q is None else w_q,
                                 self.w_k if w_k is None else w_k,
                                 self.w_v if w_v is None else w_v)

    @staticmethod
    def random(d_m, d, rng, tied=False):
        """
        I.i.d. Gaussian entries scaled by 1/sqrt(d_m). With tied=True W_K is W_Q, which makes W_Q W_K^T positive
        semidefinite.
        """
        scale = 1.0 / np.sqrt(d_m)
        w_q = rng.normal((d_m, d), scale=scale)
        w_k = w_q.copy() if tied else rng.normal((d_m, d), scale=scale)
        w_v = rng.normal((d_m, d), scale=scale)
        return ProjectionWeights(w_q, w_k, w_v)
