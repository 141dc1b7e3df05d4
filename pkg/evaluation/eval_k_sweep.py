#!/usr/bin/env python

import argparse
import os

from knnattn.attention.selection import K_RULES
from knnattn.attention.selection import choose_k
from knnattn.utils.config import default_out_dir
from knnattn.utils.logger import get_logger
from knnattn.vit.config import ModelConfig
from knnattn.vit.config import SyntheticTaskConfig
from knnattn.vit.config import TrainConfig
from knnattn.vit.trainer import k_sweep


''' main '''
if __name__ == '__main__':
    parser = argparse.ArgumentParser()
    parser.add_argument('-o', '--out', help='output directory', type=str,
                        default=os.path.join(default_out_dir(), "k_sweep"))
    parser.add_argument('-s', '--seeds', help='number of seeds', type=int, default=3)
    parser.add_argument('-e', '--epochs', help='epochs per run', type=int, default=30)
    parser.add_argument('-d', '--debug', help='enable debug output', action='store_true')
    args = parser.parse_args()

    # init logger
    debug = args.debug
    logger = get_logger("K Sweep Evaluation", 'DEBUG' if debug else 'INFO')

    model_cfg = ModelConfig(kind="knn", pooling="gap")
    train_cfg = TrainConfig(epochs=args.epochs)
    task_cfg = SyntheticTaskConfig()

    # the k rules plus a very sparse setting
    n = model_cfg.n_tokens
    k_values = sorted(set([2] + [choose_k(n, rule) for rule in K_RULES]))
    logger.info("Sweeping k over {values} with {n} tokens".format(values=k_values, n=n))

    summary = k_sweep(model_cfg, train_cfg, task_cfg, k_values, list(range(args.seeds)), out_dir=args.out,
                      debug=debug)

    for arm, group in summary.groupby("arm", sort=False):
        logger.info("{arm}: mean final eval acc {acc:.3f}, epochs to threshold {epochs}".format(
            arm=arm, acc=group["final_eval_acc"].mean(), epochs=group["epochs_to_threshold"].tolist()))
