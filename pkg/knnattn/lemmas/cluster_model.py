#!/usr/bin/env python

import numpy as np

from knnattn.attention.config import ProjectionWeights
from knnattn.numerics.matrix import matmul
from knnattn.numerics.rng import RngStream
from knnattn.utils.config import ConfigBase
from knnattn.utils.exceptions import ConfigError

MEANS_KEY = 0
MAX_REDRAWS = 100


class ClusterModelConfig(ConfigBase):
    """
    Patches split into one relevant group sharing the mean of the query and noisy groups around other means, every
    patch Gaussian with per-coordinate variance sigma^2 / d_m. Means not given explicitly are drawn from the seed:
    a random direction of norm mean_norm for the relevant group, noise means orthogonal to it with matched norm.
    """
    FIELDS = (
        ("n", 64),
        ("d_m", 32),
        ("d", None),
        ("k1", 16),
        ("mean_norm", 2.0),
        ("relevant_mean", None),
        ("noise_means", None),
        ("num_noise_means", 3),
        ("sigma", 0.5),
        ("trials", 500),
        ("batch", 20),
        ("seed", 0),
    )

    def validate(self):
        self.require(self.n >= 1, "n must be positive")
        self.require(1 <= self.k1 <= self.n, "k1 must satisfy 1 <= k1 <= n")
        self.require(self.sigma > 0, "sigma must be positive")
        self.require(self.mean_norm > 0, "mean_norm must be positive")
        self.require(self.trials >= 1 and self.batch >= 1, "trials and batch must be positive")
        self.require(self.num_noise_means >= 1, "num_noise_means must be positive")
        self.require(self.head_dim >= 1, "d must be positive")
        if self.relevant_mean is not None:
            self.require(len(self.relevant_mean) == self.d_m, "relevant_mean must have length d_m")
        if self.noise_means is not None:
            self.require(len(self.noise_means) >= 1, "noise_means must not be empty")
            self.require(all(len(mean) == self.d_m for mean in self.noise_means), "noise means must have length d_m")

    @property
    def head_dim(self):
        return self.d_m if self.d is None else self.d

    @property
    def num_batches(self):
        return int(np.ceil(self.trials / float(self.batch)))


def resolve_means(cfg):
    """
    :return: (relevant mean (d_m,), noise means (m, d_m))
    """
    rng = RngStream(cfg.seed, key=(MEANS_KEY,))

    if cfg.relevant_mean is not None:
        relevant = np.asarray(cfg.relevant_mean, dtype=np.float64)
    else:
        direction = rng.normal(cfg.d_m)
        relevant = cfg.mean_norm * direction / np.linalg.norm(direction)

    if cfg.noise_means is not None:
        return relevant, np.asarray(cfg.noise_means, dtype=np.float64)

    norm = np.linalg.norm(relevant)
    unit = relevant / norm
    noise_means = list()
    while len(noise_means) < cfg.num_noise_means:
        draw = rng.normal(cfg.d_m)
        draw = draw - np.dot(draw, unit) * unit
        residual = np.linalg.norm(draw)
        # a draw almost parallel to the relevant mean cannot be made orthogonal reliably
        if residual < 1e-8 * max(1.0, np.linalg.norm(draw)):
            continue
        noise_means.append(norm * draw / residual)

    return relevant, np.asarray(noise_means)


def separation(relevant, noise_means, weights):
    """
    :return: (mu W_Q W_K^T mu^T, max_j |mu W_Q W_K^T nu_j^T|)
    """
    query = matmul(relevant[None, :], weights.w_q)
    self_keys = matmul(relevant[None, :], weights.w_k)
    noise_keys = matmul(noise_means, weights.w_k)

    self_similarity = float(matmul(query, self_keys.T)[0, 0])
    cross = float(np.max(np.abs(matmul(query, noise_keys.T))))
    return self_similarity, cross


def check_separation(relevant, noise_means, weights):
    self_similarity, cross = separation(relevant, noise_means, weights)
    if not self_similarity > cross:
        raise ConfigError("means are not separated under W_Q W_K^T: self {s:.4g} <= cross {c:.4g}".format(
            s=self_similarity, c=cross))


def draw_separated_weights(cfg, relevant, noise_means, rng):
    """
    Tied Gaussian projections, redrawn until the relevant mean is separated from the noise means.
    """
    for _ in range(MAX_REDRAWS):
        weights = ProjectionWeights.random(cfg.d_m, cfg.head_dim, rng, tied=True)
        self_similarity, cross = separation(relevant, noise_means, weights)
        if self_similarity > cross:
            return weights
    raise ConfigError("no separated projection found in {num} draws, increase d_m or the mean norm".format(
        num=MAX_REDRAWS))


def sample_cluster_patches(cfg, rng, means=None):
    """
    :param means: optional output of resolve_means(cfg), recomputed when omitted
    :return: (X (n, d_m), relevant labels (n,) bool), rows shuffled
    """
    relevant, noise_means = resolve_means(cfg) if means is None else means

    row_means = np.empty((cfg.n, cfg.d_m), dtype=np.float64)
    row_means[:cfg.k1] = relevant
    for i in range(cfg.k1, cfg.n):
        row_means[i] = noise_means[(i - cfg.k1) % len(noise_means)]

    labels = np.zeros(cfg.n, dtype=bool)
    labels[:cfg.k1] = True

    noise = rng.normal((cfg.n, cfg.d_m), scale=cfg.sigma / np.sqrt(cfg.d_m))
    order = rng.permutation(cfg.n)

    return (row_means + noise)[order], labels[order]
