#!/usr/bin/env python

from knnattn.lemmas.experiments import DEFAULT_D_GRID
from knnattn.lemmas.experiments import DEFAULT_SIGMAS
from knnattn.lemmas.experiments import QUERY_MODELS
from knnattn.utils.config import ConfigBase

LEMMA_SECTIONS = ("cluster", "lemma1", "lemma2", "lemma3")


class Lemma1Config(ConfigBase):
    """
    Gaussian patches and untied projections; k unset means n/2.
    """
    FIELDS = (
        ("n", 32),
        ("d_m", 16),
        ("d", 16),
        ("k", None),
        ("trials", 200),
        ("batch", 20),
        ("seed", 0),
        ("tolerance", 1e-5),
        ("h", 1e-5),
    )

    def validate(self):
        self.require(self.n >= 2 and self.d_m >= 1 and self.d >= 1, "n must be at least 2, d_m and d positive")
        self.require(self.k is None or 1 <= self.k <= self.n, "k out of range")
        self.require(self.trials >= 1 and self.batch >= 1, "trials and batch must be positive")
        self.require(self.tolerance >= 0 and self.h > 0, "tolerance must not be negative and h must be positive")

    @property
    def top_k(self):
        return self.k if self.k is not None else self.n // 2


class Lemma2Config(ConfigBase):
    FIELDS = (
        ("d_grid", list(DEFAULT_D_GRID)),
        ("query_model", "patch"),
        ("trials", 200),
    )

    def validate(self):
        self.require(len(self.d_grid) >= 1 and min(self.d_grid) >= 1, "d_grid must hold positive dimensions")
        self.require(self.query_model in QUERY_MODELS, "query_model must be one of {models}".format(
            models=", ".join(QUERY_MODELS)))
        self.require(self.trials >= 1, "trials must be positive")


class Lemma3Config(ConfigBase):
    FIELDS = (
        ("sigmas", list(DEFAULT_SIGMAS)),
        ("k_grid", [4, 8, 16, 32]),
        ("trials", 500),
    )

    def validate(self):
        self.require(len(self.sigmas) >= 1 and min(self.sigmas) > 0, "sigmas must be positive")
        self.require(self.trials >= 1, "trials must be positive")
