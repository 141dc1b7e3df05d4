#!/usr/bin/env python

import argparse
import os

import numpy as np
import pandas as pd

from knnattn.attention.kernels import row_entropy
from knnattn.numerics.matrix import softmax_rows
from knnattn.numerics.rng import RngStream
from knnattn.utils.config import default_out_dir
from knnattn.utils.logger import get_logger
from knnattn.vit.config import ModelConfig
from knnattn.vit.config import SyntheticTaskConfig
from knnattn.vit.config import TrainConfig
from knnattn.vit.trainer import epochs_to_threshold
from knnattn.vit.trainer import train_run


''' main '''
if __name__ == '__main__':
    parser = argparse.ArgumentParser()
    parser.add_argument('-o', '--out', help='output directory', type=str,
                        default=os.path.join(default_out_dir(), "temperature"))
    parser.add_argument('-m', '--matrices', help='random score matrices for the entropy curve', type=int, default=100)
    parser.add_argument('-e', '--epochs', help='epochs per training arm, 0 skips training', type=int, default=20)
    parser.add_argument('-d', '--debug', help='enable debug output', action='store_true')
    args = parser.parse_args()

    # init logger
    debug = args.debug
    logger = get_logger("Temperature Evaluation", 'DEBUG' if debug else 'INFO')

    # general settings
    seed = 4242
    n = 16
    temperatures = [0.25, 0.5, 1.0, 2.0, 4.0]

    if not os.path.isdir(args.out):
        os.makedirs(args.out)

    # mean attention-row entropy as a function of t
    rng = RngStream(seed)
    entropies = np.zeros((args.matrices, len(temperatures)))
    for i in range(args.matrices):
        scores = rng.child(i).normal((n, n), scale=3.0)
        for j, t in enumerate(temperatures):
            entropies[i, j] = np.mean(row_entropy(softmax_rows(scores / t)))

    entropy_frame = pd.DataFrame({"temperature": temperatures, "mean_entropy": np.mean(entropies, axis=0),
                                  "max_entropy": [np.log(n)] * len(temperatures)})
    entropy_frame.to_csv(os.path.join(args.out, "entropy.csv"), index=False, encoding="utf-8")
    logger.info("\n" + entropy_frame.to_string(index=False))

    # dense attention arms trained with softened or sharpened softmax
    rows = list()
    if args.epochs > 0:
        train_cfg = TrainConfig(epochs=args.epochs, seed=seed)
        task_cfg = SyntheticTaskConfig(seed=seed)
        for t in temperatures:
            model_cfg = ModelConfig(kind="dense", temperature=t)
            _, history = train_run(model_cfg, train_cfg, task_cfg, out_dir=args.out,
                                   name="metrics_t={t:g}".format(t=t), debug=debug)
            rows.append([t, epochs_to_threshold(history, train_cfg.accuracy_threshold), history[-1].eval_acc])
            logger.info("t={t:g}: final eval acc {acc:.3f}".format(t=t, acc=history[-1].eval_acc))

        pd.DataFrame(rows, columns=["temperature", "epochs_to_threshold", "final_eval_acc"]).to_csv(
            os.path.join(args.out, "temperature_runs.csv"), index=False, encoding="utf-8")
