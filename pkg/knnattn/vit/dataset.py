#!/usr/bin/env python

import hashlib

import numpy as np

from knnattn.numerics.rng import RngStream
from knnattn.utils.exceptions import ShapeError

MEANS_KEY = 0
TRAIN_KEY = 1
EVAL_KEY = 2


class SyntheticDataset(object):
    """
    :param images: (N, patches, patch_dim)
    :param labels: (N,) class indices
    :param signal: (N, patches) bool, True where a patch carries the class signal
    """
    def __init__(self, images, labels, grid, classes, signal=None):
        self.images = np.ascontiguousarray(images, dtype=np.float64)
        self.labels = np.asarray(labels, dtype=np.int64)
        self.grid = (int(grid[0]), int(grid[1]))
        self.classes = int(classes)
        self.signal = signal

        if self.images.ndim != 3 or self.images.shape[0] != self.labels.shape[0] or \
                self.images.shape[1] != self.grid[0] * self.grid[1]:
            raise ShapeError("dataset", self.images.shape, self.labels.shape, self.grid)

    def __len__(self):
        return self.images.shape[0]

    def __str__(self):
        return "SyntheticDataset: {num} images, grid {rows}x{cols}, patch dim {dim}, {classes} classes".format(
            num=len(self), rows=self.grid[0], cols=self.grid[1], dim=self.patch_dim, classes=self.classes)

    @property
    def patch_dim(self):
        return self.images.shape[2]

    def subset(self, indices):
        signal = None if self.signal is None else self.signal[indices]
        return SyntheticDataset(self.images[indices], self.labels[indices], self.grid, self.classes, signal=signal)

    def class_counts(self):
        return np.bincount(self.labels, minlength=self.classes)


def dataset_hash(dataset):
    digest = hashlib.sha256()
    digest.update(np.ascontiguousarray(dataset.images, dtype="<f8").tobytes())
    digest.update(np.ascontiguousarray(dataset.labels, dtype="<i8").tobytes())
    return digest.hexdigest()


def class_means(cfg):
    if cfg.class_means is not None:
        return np.asarray(cfg.class_means, dtype=np.float64)

    directions = RngStream(cfg.seed, key=(MEANS_KEY,)).normal((cfg.classes, cfg.patch_dim))
    norms = np.sqrt(np.sum(directions * directions, axis=1, keepdims=True))
    return cfg.signal_norm * directions / norms


def _generate_split(cfg, means, size, rng):
    labels = (np.arange(size) % cfg.classes)[rng.child(0).permutation(size)]
    images = np.zeros((size, cfg.num_patches, cfg.patch_dim), dtype=np.float64)
    signal = np.zeros((size, cfg.num_patches), dtype=bool)

    noise_scale = cfg.sigma / np.sqrt(cfg.patch_dim)
    clutter_scale = cfg.clutter_scale / np.sqrt(cfg.patch_dim)

    for i in range(size):
        image_rng = rng.child(1, i)
        positions = image_rng.permutation(cfg.num_patches)[:cfg.signal_patches]
        signal[i, positions] = True

        if cfg.clutter == "gaussian":
            images[i] = image_rng.normal((cfg.num_patches, cfg.patch_dim), scale=clutter_scale)
        images[i, positions] = means[labels[i]] + image_rng.normal((cfg.signal_patches, cfg.patch_dim),
                                                                   scale=noise_scale)

    return SyntheticDataset(images, labels, cfg.grid, cfg.classes, signal=signal)


def generate_synthetic(cfg, rng=None):
    """
    Balanced train and eval splits of the noisy-patch task, a deterministic function of the config (and of rng when
    one is passed instead of the config seed).
    :return: (train split, eval split)
    """
    rng = RngStream(cfg.seed) if rng is None else rng
    means = class_means(cfg)

    train = _generate_split(cfg, means, cfg.train_size, rng.child(TRAIN_KEY))
    evaluation = _generate_split(cfg, means, cfg.eval_size, rng.child(EVAL_KEY))
    return train, evaluation
