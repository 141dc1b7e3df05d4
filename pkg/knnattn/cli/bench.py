#!/usr/bin/env python

import numbers
import time

import numpy as np
import pandas as pd

from knnattn.attention.kernels import dense_attention
from knnattn.attention.kernels import knn_attention_fast
from knnattn.attention.kernels import knn_attention_slow
from knnattn.attention.selection import check_k
from knnattn.numerics.rng import RngStream
from knnattn.utils.config import ConfigBase
from knnattn.utils.logger import get_logger

KERNELS = ("dense", "knn_fast", "knn_slow")
BENCH_COLUMNS = ["n", "d", "k", "kernel", "median_ms", "reps"]

# fast k-NN must not be slower than c times the per-query version
SPEEDUP_CONSTANT = 1.0


def _is_int(value):
    return isinstance(value, numbers.Integral) and not isinstance(value, bool)


class BenchConfig(ConfigBase):
    """
    sizes holds [n, d, k] triples; a k of null means n/2 rounded up.
    """
    FIELDS = (
        ("sizes", [[64, 32, None], [128, 32, None], [196, 64, 100]]),
        ("reps", 5),
        ("seed", 0),
        ("c", SPEEDUP_CONSTANT),
    )

    def validate(self):
        self.require(self.reps >= 1, "reps must be positive")
        self.require(self.c > 0, "c must be positive")
        self.require(all(isinstance(size, (list, tuple)) and len(size) == 3 for size in self.sizes),
                     "sizes must be [n, d, k] triples")
        self.require(all(_is_int(n) and _is_int(d) and (k is None or _is_int(k)) for n, d, k in self.sizes),
                     "sizes must hold integers, k may be null")

    def resolved_sizes(self):
        resolved = list()
        for n, d, k in self.sizes:
            k = (n + 1) // 2 if k is None else k
            resolved.append((int(n), int(d), check_k(k, n)))
        return resolved


class BenchRow(object):
    def __init__(self, n, d, k, kernel, median_ms, reps):
        self.n = n
        self.d = d
        self.k = k
        self.kernel = kernel
        self.median_ms = median_ms
        self.reps = reps

    def __str__(self):
        return "{n}, {d}, {k}, {kernel}, {ms:.3f}, {reps}".format(n=self.n, d=self.d, k=self.k, kernel=self.kernel,
                                                                 ms=self.median_ms, reps=self.reps)


def _median_ms(run, reps):
    timings = list()
    for _ in range(reps):
        start_time = time.perf_counter()
        run()
        timings.append((time.perf_counter() - start_time) * 1000.0)
    return float(np.median(timings))


class Benchmark(object):
    def __init__(self, cfg, debug=False):
        self.logger = get_logger('Benchmark', 'DEBUG' if debug else 'INFO')
        self.cfg = cfg

    def run(self):
        """
        :return: (list of BenchRow, list of (n, d, k) where fast k-NN exceeded c times the slow version)
        """
        rows = list()
        violations = list()

        for n, d, k in self.cfg.resolved_sizes():
            rng = RngStream(self.cfg.seed, key=(n, d, k))
            Q, K, V = rng.normal((n, d)), rng.normal((n, d)), rng.normal((n, d))

            runs = {
                "dense": lambda: dense_attention(Q, K, V),
                "knn_fast": lambda: knn_attention_fast(Q, K, V, k),
                "knn_slow": lambda: knn_attention_slow(Q, K, V, k),
            }
            medians = dict()
            for kernel in KERNELS:
                medians[kernel] = _median_ms(runs[kernel], self.cfg.reps)
                rows.append(BenchRow(n, d, k, kernel, medians[kernel], self.cfg.reps))
                self.logger.info(str(rows[-1]))

            if medians["knn_fast"] > self.cfg.c * medians["knn_slow"]:
                violations.append((n, d, k))
                self.logger.error("fast k-NN slower than {c} x slow at n={n}, d={d}, k={k}".format(
                    c=self.cfg.c, n=n, d=d, k=k))

        return rows, violations


def bench_frame(rows):
    return pd.DataFrame([[getattr(row, column) for column in BENCH_COLUMNS] for row in rows], columns=BENCH_COLUMNS)
