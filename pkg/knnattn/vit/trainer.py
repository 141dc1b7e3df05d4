#!/usr/bin/env python

import copy
import os
import threading
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pandas as pd

from knnattn.numerics.matrix import check_finite
from knnattn.numerics.matrix import row_sum
from knnattn.numerics.rng import RngStream
from knnattn.utils.exceptions import NonFiniteError
from knnattn.utils.exceptions import NumericalAbort
from knnattn.utils.exceptions import ShapeError
from knnattn.utils.logger import get_logger
from knnattn.vit.checkpoint import save_checkpoint
from knnattn.vit.dataset import generate_synthetic
from knnattn.vit.model import build_model
from knnattn.vit.model import cross_entropy
from knnattn.vit.optim import Adam

MODEL_KEY = 0
EPOCH_KEY = 1
EVAL_BATCH_SIZE = 64

METRICS_COLUMNS = ["epoch", "train_loss", "train_acc", "eval_acc", "wall_ms"]
SUMMARY_COLUMNS = ["seed", "arm", "epochs_to_threshold", "final_train_acc", "final_eval_acc"]


class MetricsRow(object):
    def __init__(self, epoch, train_loss, train_acc, eval_acc, wall_ms):
        self.epoch = int(epoch)
        self.train_loss = float(train_loss)
        self.train_acc = float(train_acc)
        self.eval_acc = float(eval_acc)
        self.wall_ms = float(wall_ms)

    def __str__(self):
        return "{epoch}, {loss:.6f}, {train:.4f}, {eval:.4f}, {wall:.1f}".format(
            epoch=self.epoch, loss=self.train_loss, train=self.train_acc, eval=self.eval_acc, wall=self.wall_ms)

    def to_dict(self):
        return {column: getattr(self, column) for column in METRICS_COLUMNS}


def write_metrics(history, path):
    frame = pd.DataFrame([row.to_dict() for row in history], columns=METRICS_COLUMNS)
    frame.to_csv(path, index=False, encoding="utf-8")
    return path


def check_conforms(model, dataset):
    cfg = model.cfg
    if dataset.images.shape[1:] != (cfg.num_patches, cfg.input_dim) or dataset.classes != cfg.classes:
        raise ShapeError("dataset vs model", dataset.images.shape, (cfg.num_patches, cfg.input_dim))


def _chunks(size, batch_size):
    return [np.arange(start, min(start + batch_size, size)) for start in range(0, size, batch_size)]


def predict_logits(model, images, threads=1, batch_size=EVAL_BATCH_SIZE):
    """
    Logits of every image. With threads > 1 every worker runs its own copy of the model; a logit only depends on its
    own image, so the result equals the single-threaded one.
    """
    chunks = _chunks(images.shape[0], batch_size)
    if threads <= 1 or len(chunks) == 1:
        return np.concatenate([model.forward(images[chunk]) for chunk in chunks], axis=0)

    local = threading.local()

    def run(chunk):
        if not hasattr(local, "model"):
            local.model = copy.deepcopy(model)
        return local.model.forward(images[chunk])

    with ThreadPoolExecutor(max_workers=threads) as executor:
        return np.concatenate(list(executor.map(run, chunks)), axis=0)


def evaluate(model, dataset, threads=1):
    """
    Top-1 accuracy.
    """
    check_conforms(model, dataset)
    logits = predict_logits(model, dataset.images, threads=threads)
    check_finite(logits, "logits")
    predictions = np.argmax(logits, axis=1)
    return float(np.count_nonzero(predictions == dataset.labels)) / len(dataset)


def evaluate_loss(model, dataset, threads=1):
    """
    Mean cross-entropy, per-sample losses reduced in sample order.
    """
    check_conforms(model, dataset)
    loss, _, _ = cross_entropy(predict_logits(model, dataset.images, threads=threads), dataset.labels)
    return loss


def confusion_matrix(model, dataset, threads=1):
    check_conforms(model, dataset)
    predictions = np.argmax(predict_logits(model, dataset.images, threads=threads), axis=1)
    matrix = np.zeros((dataset.classes, dataset.classes), dtype=np.int64)
    np.add.at(matrix, (dataset.labels, predictions), 1)
    return matrix


def epochs_to_threshold(history, threshold):
    """
    First epoch whose train accuracy reaches the threshold, None if none does.
    """
    for row in history:
        if row.train_acc >= threshold:
            return row.epoch
    return None


class Trainer(object):
    """
    Mini-batch Adam on the mean cross-entropy. The sample order of epoch e is drawn from the stream (seed, e), so
    resuming after epoch e continues exactly like an uninterrupted run.
    """
    def __init__(self, train_cfg, out_dir=None, configs=None, name="metrics", debug=False):
        self.logger = get_logger('Trainer', 'DEBUG' if debug else 'INFO')

        self.cfg = train_cfg
        self.out_dir = out_dir
        self.configs = configs if configs is not None else dict()
        self.name = name

        if self.out_dir is not None and not os.path.isdir(self.out_dir):
            os.makedirs(self.out_dir)

    @property
    def metrics_path(self):
        return os.path.join(self.out_dir, "{name}.csv".format(name=self.name))

    @property
    def checkpoint_path(self):
        return os.path.join(self.out_dir, "{name}.ckpt".format(name=self.name))

    def train(self, model, train_set, eval_set, resume=None):
        """
        :param resume: optional Checkpoint to continue from
        :return: list of MetricsRow, one per epoch, including the ones restored from the checkpoint
        """
        check_conforms(model, train_set)
        check_conforms(model, eval_set)

        optimizer = Adam.from_config(model.parameters(), self.cfg)
        history = list()
        first_epoch = 1

        if resume is not None:
            resume.load_into(model)
            if resume.optimizer is not None:
                optimizer.load_state(resume.optimizer["t"], resume.optimizer["m"], resume.optimizer["v"])
            history = [MetricsRow(**row) for row in resume.history]
            first_epoch = resume.epoch + 1
            self.logger.info("Resuming after epoch {epoch}".format(epoch=resume.epoch))

        for epoch in range(first_epoch, self.cfg.epochs + 1):
            start_time = time.time()
            train_loss = self._run_epoch(model, optimizer, train_set, epoch)

            train_acc, eval_acc = self._evaluate_epoch(model, train_set, eval_set, epoch)

            row = MetricsRow(epoch, train_loss, train_acc, eval_acc, (time.time() - start_time) * 1000.0)
            history.append(row)
            self.logger.info("Epoch {epoch}: loss {loss:.4f}, train acc {train:.3f}, eval acc {eval:.3f}".format(
                epoch=epoch, loss=row.train_loss, train=row.train_acc, eval=row.eval_acc))

            if self.out_dir is not None:
                write_metrics(history, self.metrics_path)
                save_checkpoint(self.checkpoint_path, model, self.configs, optimizer=optimizer, epoch=epoch,
                                history=[row.to_dict() for row in history])

        return history

    def _evaluate_epoch(self, model, train_set, eval_set, epoch):
        """
        Accuracy on both splits after the last step of an epoch. That step may already have left the parameters
        non-finite, which aborts like a non-finite training loss.
        """
        if not all(np.all(np.isfinite(value)) for _, value in model.named_parameters()):
            raise NumericalAbort(epoch, "eval", float("nan"))
        try:
            return (evaluate(model, train_set, threads=self.cfg.threads),
                    evaluate(model, eval_set, threads=self.cfg.threads))
        except NonFiniteError:
            raise NumericalAbort(epoch, "eval", float("nan"))

    def _run_epoch(self, model, optimizer, train_set, epoch):
        order = RngStream(self.cfg.seed, key=(EPOCH_KEY, epoch)).permutation(len(train_set))
        batch_losses = np.zeros(len(_chunks(len(train_set), self.cfg.batch_size)))

        for b, chunk in enumerate(_chunks(len(train_set), self.cfg.batch_size)):
            indices = order[chunk]
            images = train_set.images[indices]

            model.zero_grad()
            try:
                logits = model.forward(images)
            except NonFiniteError:
                raise NumericalAbort(epoch, b, float("nan"))
            if not np.all(np.isfinite(logits)):
                raise NumericalAbort(epoch, b, float("nan"))

            loss, _, grad = cross_entropy(logits, train_set.labels[indices])
            if not np.isfinite(loss):
                raise NumericalAbort(epoch, b, loss)

            model.backward(images, grad)
            optimizer.step(model.gradients())

            batch_losses[b] = loss * len(chunk)
            self.logger.debug("epoch {epoch} batch {b}: loss {loss:.6f}".format(epoch=epoch, b=b, loss=loss))

        return float(row_sum(batch_losses[None, :])[0]) / len(train_set)


def build_for_seed(model_cfg, seed):
    return build_model(model_cfg, RngStream(seed, key=(MODEL_KEY,)))


def arm_config(model_cfg, arm):
    """
    "dense", "knn" (k from the model config) or "knn:<k>".
    """
    kind, _, k = arm.partition(":")
    if kind == "dense":
        return model_cfg.replace(kind="dense")
    if kind == "knn":
        return model_cfg.replace(kind="knn", k=int(k) if k else model_cfg.k)
    raise ValueError("Unknown arm: {arm}".format(arm=arm))


def train_run(model_cfg, train_cfg, task_cfg, out_dir=None, name="metrics", debug=False):
    """
    Dataset, model and training of one run, all seeded from train_cfg.seed and task_cfg.seed.
    :return: (model, history)
    """
    train_set, eval_set = generate_synthetic(task_cfg)
    model = build_for_seed(model_cfg, train_cfg.seed)
    configs = {"model": model_cfg.to_dict(), "train": train_cfg.to_dict(), "task": task_cfg.to_dict()}

    trainer = Trainer(train_cfg, out_dir=out_dir, configs=configs, name=name, debug=debug)
    return model, trainer.train(model, train_set, eval_set)


def compare_runs(model_cfg, train_cfg, task_cfg, arms, seeds, out_dir=None, debug=False):
    """
    Paired runs: for every seed each arm starts from the same initialization and sees the same data in the same
    order, only the attention differs.
    :return: summary DataFrame with one row per (seed, arm)
    """
    logger = get_logger('CompareRuns', 'DEBUG' if debug else 'INFO')

    rows = list()
    for seed in seeds:
        seed_train = train_cfg.replace(seed=seed)
        seed_task = task_cfg.replace(seed=seed)
        for arm in arms:
            name = "metrics_{arm}_seed={seed}".format(arm=arm.replace(":", "="), seed=seed)
            _, history = train_run(arm_config(model_cfg, arm), seed_train, seed_task, out_dir=out_dir, name=name,
                                   debug=debug)

            reached = epochs_to_threshold(history, train_cfg.accuracy_threshold)
            rows.append([seed, arm, reached, history[-1].train_acc, history[-1].eval_acc])
            logger.info("seed {seed}, arm {arm}: epochs to {threshold:.0%} train acc: {reached}".format(
                seed=seed, arm=arm, threshold=train_cfg.accuracy_threshold, reached=reached))

    summary = pd.DataFrame(rows, columns=SUMMARY_COLUMNS)
    if out_dir is not None:
        summary.to_csv(os.path.join(out_dir, "summary.csv"), index=False, encoding="utf-8")
    return summary


def paired_wins(summary, arm, baseline):
    """
    Number of seeds for which arm reaches the threshold no later than baseline; never reaching it counts as
    infinitely late.
    """
    def epochs(row_arm):
        frame = summary[summary["arm"] == row_arm].set_index("seed")["epochs_to_threshold"]
        return frame.apply(lambda value: np.inf if pd.isnull(value) else value)

    arm_epochs, baseline_epochs = epochs(arm), epochs(baseline)
    seeds = arm_epochs.index.intersection(baseline_epochs.index)
    return int(np.count_nonzero(arm_epochs[seeds].values <= baseline_epochs[seeds].values)), len(seeds)


def k_sweep(model_cfg, train_cfg, task_cfg, k_values, seeds, out_dir=None, debug=False):
    """
    Impact of k: paired runs over knn arms with the given k values plus the dense arm.
    """
    arms = ["knn:{k}".format(k=k) for k in k_values] + ["dense"]
    return compare_runs(model_cfg, train_cfg, task_cfg, arms, seeds, out_dir=out_dir, debug=debug)
