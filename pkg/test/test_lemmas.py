#!/usr/bin/env python

import json
import os
import shutil
import tempfile
import unittest

import numpy as np
import pandas as pd

from knnattn.lemmas.cluster_model import ClusterModelConfig
from knnattn.lemmas.config import Lemma1Config
from knnattn.lemmas.config import Lemma2Config
from knnattn.lemmas.config import Lemma3Config
from knnattn.lemmas.experiments import batch_monotone_fraction
from knnattn.lemmas.experiments import batch_pass_fraction
from knnattn.lemmas.experiments import lemma1_experiment
from knnattn.lemmas.experiments import lemma2_experiment
from knnattn.lemmas.experiments import lemma3_experiment
from knnattn.lemmas.experiments import lemma3_sweep
from knnattn.lemmas.experiments import run_trials
from knnattn.lemmas.experiments import summarize
from knnattn.lemmas.experiments import write_result
from knnattn.utils.exceptions import ConfigError

SLOW_TESTS = os.environ.get("KNN_ATTN_SLOW_TESTS") == "1"


class BatchStatisticsTest(unittest.TestCase):
    def test_batch_pass_fraction(self):
        a = [0.0, 0.0, 2.0, 2.0, 0.0]
        b = [1.0, 1.0, 1.0, 1.0, 1.0]
        # batches [0, 0] | [2, 2] | [0]
        self.assertAlmostEqual(batch_pass_fraction(a, b, 2), 2.0 / 3.0, places=14)
        self.assertEqual(batch_pass_fraction(b, b, 5), 0.0)
        self.assertEqual(batch_pass_fraction(b, b, 5, strict=False), 1.0)

    def test_batch_monotone_fraction(self):
        samples = np.array([[3.0, 2.0, 1.0],
                            [3.0, 2.0, 1.0],
                            [1.0, 2.0, 3.0],
                            [1.0, 2.0, 3.0]])
        self.assertEqual(batch_monotone_fraction(samples, 2), 0.5)
        self.assertEqual(batch_monotone_fraction(samples, 2, increasing=True), 0.5)
        self.assertEqual(batch_monotone_fraction(samples, 4), 1.0)

    def test_summarize(self):
        rows = summarize([4, 8], [[1.0, 2.0], [3.0, 2.0]])
        self.assertEqual([row.sweep_value for row in rows], [4, 8])
        self.assertEqual(rows[0].mean, 2.0)
        self.assertEqual(rows[0].std, 1.0)
        self.assertEqual(rows[1].std, 0.0)
        self.assertEqual(rows[0].trials, 2)

    def test_run_trials_order(self):
        self.assertEqual(run_trials(lambda t: t * t, 20, threads=4), [t * t for t in range(20)])


class LemmaExperimentTest(unittest.TestCase):
    def setUp(self):
        self.cfg = ClusterModelConfig(n=16, d_m=16, k1=4, sigma=1e-6, trials=10, batch=5, seed=1)
        self.tmp_dir = tempfile.mkdtemp()

    def tearDown(self):
        shutil.rmtree(self.tmp_dir)

    def test_lemma3_small_noise(self):
        result = lemma3_experiment(self.cfg, k_grid=[2, 8])
        errors = {row.sweep_value: row.mean for row in result.tables["error"]}
        rhos = {row.sweep_value: row.mean for row in result.tables["rho"]}

        self.assertEqual(sorted(errors), [2, 4, 8, 16])
        self.assertLess(errors[4], 1e-4)
        self.assertLess(errors[4], errors[16])
        self.assertEqual(rhos[2], 0.0)
        self.assertEqual(rhos[4], 0.0)
        self.assertEqual(rhos[16], 0.75)
        self.assertTrue(result.details["dense_matches_full"])
        self.assertEqual(result.pass_fraction, 1.0)
        self.assertTrue(result.passed)
        self.assertFalse(result.vacuous)

    def test_lemma3_full_relevant_is_vacuous(self):
        result = lemma3_experiment(self.cfg.replace(k1=16, trials=4))
        self.assertTrue(result.vacuous)
        self.assertTrue(result.passed)
        self.assertIsNone(result.pass_fraction)

    def test_lemma3_threads_identical(self):
        single = lemma3_experiment(self.cfg.replace(sigma=0.5), threads=1)
        parallel = lemma3_experiment(self.cfg.replace(sigma=0.5), threads=3)
        self.assertEqual(single.to_dict(), parallel.to_dict())

    def test_lemma3_sweep(self):
        result = lemma3_sweep(self.cfg.replace(trials=6, batch=3), sigmas=[1e-6, 0.5])

        self.assertIn("error_sigma=1e-06", result.tables)
        self.assertIn("rho_sigma=0.5", result.tables)
        self.assertEqual([row.sweep_value for row in result.tables["rho_k1"]], [1e-6, 0.5])
        self.assertEqual(len(result.details["per_sigma"]), 2)

    def test_lemma2_small_noise(self):
        result = lemma2_experiment(self.cfg, d_grid=[8, 16])
        survivors = [row.mean for row in result.tables["survivors"]]

        self.assertEqual(survivors, [4.0, 4.0])
        self.assertTrue(result.passed)
        self.assertEqual(result.trials, 10)

    def test_lemma2_mixture_query(self):
        result = lemma2_experiment(self.cfg.replace(sigma=0.5, trials=4), d_grid=[8], query_model="mixture")
        survivors = result.tables["survivors"][0]

        self.assertGreaterEqual(survivors.mean, 1.0)
        self.assertLessEqual(survivors.mean, 16.0)
        with self.assertRaises(ValueError):
            lemma2_experiment(self.cfg, d_grid=[8], query_model="centroid")

    def test_lemma2_all_relevant(self):
        result = lemma2_experiment(self.cfg.replace(k1=16, trials=4), d_grid=[8, 16])

        self.assertTrue(result.vacuous)
        self.assertTrue(result.passed)
        self.assertEqual([row.mean for row in result.tables["survivors"]], [16.0, 16.0])

    def test_lemma1_formula_matches(self):
        result = lemma1_experiment(n=10, d_m=6, d=3, k=5, trials=6, seed=0, batch=3)

        self.assertLess(result.details["max_rel_error"], 1e-5)
        self.assertEqual([row.sweep_value for row in result.tables["grad_wq"]], [5, 10])
        self.assertEqual(result.tables["rel_error"][0].trials, 6)

    def test_lemma1_full_k_matches_dense(self):
        result = lemma1_experiment(n=8, d_m=4, d=2, k=8, trials=4, seed=2, batch=2)
        knn, dense = result.tables["grad_wq"]

        self.assertEqual(knn.mean, dense.mean)
        knn, dense = result.tables["cov_trace"]
        self.assertEqual(knn.mean, dense.mean)
        self.assertEqual(result.pass_fraction, 1.0)
        self.assertTrue(result.vacuous)

    def test_lemma1_selection_shrinks_covariance(self):
        result = lemma1_experiment(n=32, d_m=16, d=16, k=16, trials=20, seed=5, batch=10)
        knn, dense = result.tables["cov_trace"]

        self.assertLess(knn.mean, dense.mean)
        self.assertEqual(result.pass_fraction, 1.0)
        self.assertTrue(result.passed, str(result))
        self.assertFalse(result.vacuous)
        self.assertTrue(0.0 <= result.details["wq_pass_fraction"] <= 1.0)

    def test_write_result(self):
        result = lemma2_experiment(self.cfg.replace(trials=4, batch=2), d_grid=[8, 16])
        paths = write_result(result, self.tmp_dir)

        self.assertEqual([os.path.basename(path) for path in paths], ["lemma2_survivors.csv", "lemma2_summary.json"])
        frame = pd.read_csv(paths[0])
        self.assertEqual(list(frame.columns), ["sweep_value", "mean", "std", "trials", "criterion", "pass"])
        self.assertTrue(np.all(frame["trials"] == 4))

        with open(paths[1]) as infile:
            summary = json.load(infile)
        self.assertEqual(summary["lemma"], 2)
        self.assertEqual(summary["pass"], result.passed)

    def test_lemma_configs(self):
        self.assertEqual(Lemma1Config().top_k, 16)
        self.assertEqual(Lemma1Config(k=10).top_k, 10)
        with self.assertRaises(ConfigError):
            Lemma1Config(k=33)
        with self.assertRaises(ConfigError):
            Lemma2Config(query_model="centroid")
        with self.assertRaises(ConfigError):
            Lemma3Config(sigmas=[0.0])


@unittest.skipUnless(SLOW_TESTS, "set KNN_ATTN_SLOW_TESTS=1 for the full-size lemma runs")
class FullSizeLemmaTest(unittest.TestCase):
    def test_lemma1_defaults(self):
        cfg = Lemma1Config()
        result = lemma1_experiment(cfg.n, cfg.d_m, cfg.d, cfg.top_k, cfg.trials, cfg.seed, batch=cfg.batch,
                                   tolerance=cfg.tolerance, h=cfg.h, threads=4)
        self.assertTrue(result.passed, str(result))

    def test_lemma2_defaults(self):
        result = lemma2_experiment(ClusterModelConfig(trials=Lemma2Config().trials), threads=4)
        self.assertTrue(result.passed, str(result))

    def test_lemma3_defaults(self):
        cfg = Lemma3Config()
        result = lemma3_sweep(ClusterModelConfig(trials=cfg.trials), sigmas=cfg.sigmas, k_grid=cfg.k_grid, threads=4)
        self.assertTrue(result.passed, str(result))


if __name__ == "__main__":
    unittest.main()
