#!/usr/bin/env python

import os
import shutil
import tempfile
import unittest

import numpy as np
import pandas as pd

from knnattn.utils.exceptions import NumericalAbort
from knnattn.utils.exceptions import ShapeError
from knnattn.vit.checkpoint import load_checkpoint
from knnattn.vit.config import ModelConfig
from knnattn.vit.config import SyntheticTaskConfig
from knnattn.vit.config import TrainConfig
from knnattn.vit.dataset import generate_synthetic
from knnattn.vit.trainer import METRICS_COLUMNS
from knnattn.vit.trainer import SUMMARY_COLUMNS
from knnattn.vit.trainer import MetricsRow
from knnattn.vit.trainer import Trainer
from knnattn.vit.trainer import arm_config
from knnattn.vit.trainer import build_for_seed
from knnattn.vit.trainer import compare_runs
from knnattn.vit.trainer import confusion_matrix
from knnattn.vit.trainer import epochs_to_threshold
from knnattn.vit.trainer import evaluate
from knnattn.vit.trainer import evaluate_loss
from knnattn.vit.trainer import paired_wins
from knnattn.vit.trainer import predict_logits
from knnattn.vit.trainer import train_run

SLOW_TESTS = os.environ.get("KNN_ATTN_SLOW_TESTS") == "1"


class TrainerTest(unittest.TestCase):
    def setUp(self):
        self.tmp_dir = tempfile.mkdtemp()

        self.model_cfg = ModelConfig(grid=[2, 2], input_dim=4, d_m=8, depth=1, heads=2, d=4, mlp_dim=16, classes=2)
        self.task_cfg = SyntheticTaskConfig(classes=2, grid=[2, 2], patch_dim=4, signal_patches=2, sigma=0.1,
                                            clutter="none", train_size=8, eval_size=8, seed=3)
        self.train_cfg = TrainConfig(epochs=4, batch_size=4, lr=1e-2, seed=3)

    def tearDown(self):
        shutil.rmtree(self.tmp_dir)

    def out(self, name):
        return os.path.join(self.tmp_dir, name)

    def test_zero_lr_keeps_parameters(self):
        train_set, eval_set = generate_synthetic(self.task_cfg)
        model = build_for_seed(self.model_cfg, 0)
        before = {name: value.copy() for name, value in model.named_parameters()}

        history = Trainer(self.train_cfg.replace(lr=0.0)).train(model, train_set, eval_set)

        for name, value in model.named_parameters():
            self.assertTrue(np.array_equal(value, before[name]), "Parameter {name} changed".format(name=name))
        for row in history:
            self.assertAlmostEqual(row.train_loss, history[0].train_loss, places=12)
            self.assertEqual(row.train_acc, history[0].train_acc)

    def test_overfits_tiny_task(self):
        _, history = train_run(self.model_cfg, self.train_cfg.replace(epochs=150, batch_size=8), self.task_cfg)

        self.assertEqual(max(row.train_acc for row in history), 1.0)
        self.assertLess(history[-1].train_loss, history[0].train_loss)

    def test_metrics_and_checkpoint_written(self):
        train_run(self.model_cfg, self.train_cfg, self.task_cfg, out_dir=self.tmp_dir, name="run")

        frame = pd.read_csv(self.out("run.csv"))
        self.assertEqual(list(frame.columns), METRICS_COLUMNS)
        self.assertEqual(list(frame["epoch"]), [1, 2, 3, 4])

        checkpoint = load_checkpoint(self.out("run.ckpt"))
        self.assertEqual(checkpoint.epoch, 4)
        self.assertEqual(len(checkpoint.history), 4)
        self.assertEqual(checkpoint.configs["model"], self.model_cfg.to_dict())

    def test_runs_are_reproducible(self):
        train_run(self.model_cfg, self.train_cfg, self.task_cfg, out_dir=self.out("a"))
        train_run(self.model_cfg, self.train_cfg, self.task_cfg, out_dir=self.out("b"))

        first = pd.read_csv(self.out(os.path.join("a", "metrics.csv"))).drop(columns=["wall_ms"])
        second = pd.read_csv(self.out(os.path.join("b", "metrics.csv"))).drop(columns=["wall_ms"])
        self.assertTrue(first.equals(second))

    def test_resume_matches_uninterrupted(self):
        configs = {"model": self.model_cfg.to_dict(), "train": self.train_cfg.to_dict(),
                   "task": self.task_cfg.to_dict()}
        train_set, eval_set = generate_synthetic(self.task_cfg)

        full_model = build_for_seed(self.model_cfg, 3)
        full_history = Trainer(self.train_cfg, out_dir=self.out("full"), configs=configs).train(
            full_model, train_set, eval_set)

        Trainer(self.train_cfg.replace(epochs=2), out_dir=self.out("part"), configs=configs).train(
            build_for_seed(self.model_cfg, 3), train_set, eval_set)
        resumed_model = build_for_seed(self.model_cfg, 99)
        resumed_history = Trainer(self.train_cfg, out_dir=self.out("part"), configs=configs).train(
            resumed_model, train_set, eval_set, resume=load_checkpoint(self.out(os.path.join("part", "metrics.ckpt"))))

        self.assertEqual(len(resumed_history), 4)
        for full_row, resumed_row in zip(full_history, resumed_history):
            self.assertEqual(full_row.train_loss, resumed_row.train_loss)
            self.assertEqual(full_row.train_acc, resumed_row.train_acc)
            self.assertEqual(full_row.eval_acc, resumed_row.eval_acc)
        for (name, a), (_, b) in zip(full_model.named_parameters(), resumed_model.named_parameters()):
            self.assertTrue(np.array_equal(a, b), "Parameter {name} differs after resume".format(name=name))

    def test_non_finite_aborts(self):
        train_set, eval_set = generate_synthetic(self.task_cfg)

        for parameter in ("head.weight", "pos_embed"):
            model = build_for_seed(self.model_cfg, 0)
            dict(model.named_parameters())[parameter][0, 0] = np.nan

            with self.assertRaises(NumericalAbort) as context:
                Trainer(self.train_cfg).train(model, train_set, eval_set)
            self.assertEqual(context.exception.epoch, 1)
            self.assertEqual(context.exception.batch, 0)

    def test_last_step_overflow_aborts(self):
        # a single batch per epoch, so the overflowing step is only seen by the evaluation after it
        train_set, eval_set = generate_synthetic(self.task_cfg)
        model = build_for_seed(self.model_cfg, 0)

        with self.assertRaises(NumericalAbort) as context:
            Trainer(self.train_cfg.replace(lr=1e300, batch_size=8)).train(model, train_set, eval_set)
        self.assertEqual(context.exception.epoch, 1)
        self.assertEqual(context.exception.batch, "eval")

    def test_evaluation(self):
        task_cfg = self.task_cfg.replace(eval_size=160)
        _, eval_set = generate_synthetic(task_cfg)
        model = build_for_seed(self.model_cfg, 1)

        single = predict_logits(model, eval_set.images, threads=1)
        parallel = predict_logits(model, eval_set.images, threads=3)
        self.assertTrue(np.array_equal(single, parallel))
        self.assertEqual(evaluate(model, eval_set, threads=1), evaluate(model, eval_set, threads=3))
        self.assertEqual(evaluate_loss(model, eval_set, threads=1), evaluate_loss(model, eval_set, threads=3))

        matrix = confusion_matrix(model, eval_set)
        self.assertEqual(int(np.sum(matrix)), 160)
        self.assertEqual(float(np.trace(matrix)) / 160, evaluate(model, eval_set))

        _, other_eval = generate_synthetic(task_cfg.replace(patch_dim=5))
        with self.assertRaises(ShapeError):
            evaluate(model, other_eval)

    def test_epochs_to_threshold(self):
        history = [MetricsRow(1, 1.0, 0.5, 0.5, 1.0), MetricsRow(2, 0.8, 0.9, 0.7, 1.0),
                   MetricsRow(3, 0.5, 1.0, 0.8, 1.0)]
        self.assertEqual(epochs_to_threshold(history, 0.9), 2)
        self.assertEqual(epochs_to_threshold(history, 1.0), 3)
        self.assertIsNone(epochs_to_threshold(history[:1], 0.9))

    def test_arm_config(self):
        self.assertEqual(arm_config(self.model_cfg, "dense").kind, "dense")
        self.assertEqual(arm_config(self.model_cfg, "knn:3").top_k, 3)
        self.assertEqual(arm_config(self.model_cfg, "knn").top_k, 2)
        with self.assertRaises(ValueError):
            arm_config(self.model_cfg, "sparse")

    def test_compare_runs(self):
        summary = compare_runs(self.model_cfg, self.train_cfg.replace(epochs=2), self.task_cfg, ["knn", "dense"],
                               seeds=[0, 1], out_dir=self.tmp_dir)

        self.assertEqual(list(summary.columns), SUMMARY_COLUMNS)
        self.assertEqual(len(summary), 4)
        self.assertTrue(os.path.isfile(self.out("summary.csv")))
        self.assertTrue(os.path.isfile(self.out("metrics_dense_seed=1.csv")))

        wins, total = paired_wins(summary, "knn", "dense")
        self.assertEqual(total, 2)
        self.assertTrue(0 <= wins <= 2)

    def test_paired_wins(self):
        summary = pd.DataFrame([[0, "knn", 3, 1.0, 1.0], [0, "dense", 5, 1.0, 1.0],
                                [1, "knn", None, 0.5, 0.5], [1, "dense", 4, 1.0, 1.0],
                                [2, "knn", None, 0.5, 0.5], [2, "dense", None, 0.5, 0.5]], columns=SUMMARY_COLUMNS)
        self.assertEqual(paired_wins(summary, "knn", "dense"), (2, 3))


@unittest.skipUnless(SLOW_TESTS, "set KNN_ATTN_SLOW_TESTS=1 for the 10-seed convergence comparison")
class ConvergenceTrendTest(unittest.TestCase):
    def test_knn_reaches_threshold_no_later_than_dense(self):
        model_cfg = ModelConfig(grid=[4, 4], input_dim=8, d_m=16, depth=2, heads=2, d=8, mlp_dim=32, kind="knn",
                                pooling="gap", classes=4)
        train_cfg = TrainConfig(epochs=30, batch_size=16, lr=1e-3, accuracy_threshold=0.9)
        task_cfg = SyntheticTaskConfig(classes=4, grid=[4, 4], patch_dim=8, signal_patches=4, sigma=0.5,
                                       clutter="gaussian", train_size=64, eval_size=64)

        summary = compare_runs(model_cfg, train_cfg, task_cfg, ["knn", "dense"], seeds=list(range(0, 10)))
        wins, total = paired_wins(summary, "knn", "dense")

        self.assertEqual(total, 10)
        self.assertGreaterEqual(wins, 7, summary.to_string(index=False))


if __name__ == "__main__":
    unittest.main()
