#!/usr/bin/env python

import argparse
import os
import sys

from knnattn.utils.config import default_out_dir
from knnattn.utils.logger import get_logger
from knnattn.vit.config import ModelConfig
from knnattn.vit.config import SyntheticTaskConfig
from knnattn.vit.config import TrainConfig
from knnattn.vit.trainer import compare_runs
from knnattn.vit.trainer import paired_wins


''' main '''
if __name__ == '__main__':
    parser = argparse.ArgumentParser()
    parser.add_argument('-o', '--out', help='output directory', type=str,
                        default=os.path.join(default_out_dir(), "convergence"))
    parser.add_argument('-s', '--seeds', help='number of paired seeds', type=int, default=10)
    parser.add_argument('-e', '--epochs', help='epochs per run', type=int, default=30)
    parser.add_argument('-d', '--debug', help='enable debug output', action='store_true')
    args = parser.parse_args()

    # init logger
    debug = args.debug
    logger = get_logger("Convergence Evaluation", 'DEBUG' if debug else 'INFO')

    # general settings
    first_seed = 0
    arms = ["knn", "dense"]
    required_wins = 7  # out of 10 seeds

    model_cfg = ModelConfig(grid=[4, 4], input_dim=8, d_m=16, depth=2, heads=2, d=8, mlp_dim=32, kind="knn",
                            pooling="gap", classes=4)
    train_cfg = TrainConfig(epochs=args.epochs, batch_size=16, lr=1e-3, accuracy_threshold=0.9)
    task_cfg = SyntheticTaskConfig(classes=4, grid=[4, 4], patch_dim=8, signal_patches=4, sigma=0.5,
                                   clutter="gaussian", train_size=64, eval_size=64)

    logger.info("k-NN arm uses k={k} of {n} tokens".format(k=model_cfg.top_k, n=model_cfg.n_tokens))

    seeds = list(range(first_seed, first_seed + args.seeds))
    summary = compare_runs(model_cfg, train_cfg, task_cfg, arms, seeds, out_dir=args.out, debug=debug)

    wins, total = paired_wins(summary, "knn", "dense")
    logger.info("k-NN reached {threshold:.0%} train accuracy no later than dense in {wins}/{total} seeds".format(
        threshold=train_cfg.accuracy_threshold, wins=wins, total=total))

    scaled_required = required_wins * total / 10.0
    if wins >= scaled_required:
        logger.info("Convergence trend holds")
    else:
        logger.error("Convergence trend does not hold (needed {needed:g})".format(needed=scaled_required))
        sys.exit(1)
