#!/usr/bin/env python

import numpy as np

MAX_SEED = 2 ** 64


class RngStream(object):
    """
    Counter-based random stream (Philox). Sub-streams are addressed by key, e.g. (trial,) or (epoch, batch), so a
    trial draws the same numbers no matter in which order or on which worker it runs.
    """
    def __init__(self, seed, key=()):
        seed = int(seed)
        assert 0 <= seed < MAX_SEED, "seed must be a 64-bit unsigned integer"

        self.seed = seed
        self.key = tuple(int(k) for k in key)

        seed_sequence = np.random.SeedSequence(self.seed, spawn_key=self.key)
        self.generator = np.random.Generator(np.random.Philox(seed_sequence))

    def __str__(self):
        return "RngStream(seed={seed}, key={key})".format(seed=self.seed, key=self.key)

    def child(self, *key):
        return RngStream(self.seed, self.key + tuple(key))

    def normal(self, size, scale=1.0, loc=0.0):
        return self.generator.normal(loc=loc, scale=scale, size=size)

    def uniform(self, size, low=0.0, high=1.0):
        return self.generator.uniform(low=low, high=high, size=size)

    def permutation(self, n):
        return self.generator.permutation(n)

    def integers(self, low, high, size=None):
        return self.generator.integers(low, high, size=size)

    def truncated_normal(self, size, std=0.02, bound=2.0):
        """
        Normal draws redrawn until they fall within bound standard deviations.
        """
        values = self.generator.normal(scale=std, size=size)
        outside = np.abs(values) > bound * std
        while np.any(outside):
            values[outside] = self.generator.normal(scale=std, size=int(np.count_nonzero(outside)))
            outside = np.abs(values) > bound * std
        return values
