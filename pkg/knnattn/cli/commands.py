#!/usr/bin/env python

import argparse
import json
import os

from knnattn.cli.bench import BenchConfig
from knnattn.cli.bench import Benchmark
from knnattn.cli.bench import bench_frame
from knnattn.cli.manifest import RunConfig
from knnattn.cli.manifest import RunManifest
from knnattn.cli.manifest import SPLITS
from knnattn.cli.verify import VerifyConfig
from knnattn.cli.verify import Verifier
from knnattn.cli.verify import results_frame
from knnattn.diagnostics.report import diagnose
from knnattn.diagnostics.report import write_report
from knnattn.lemmas.cluster_model import ClusterModelConfig
from knnattn.lemmas.config import LEMMA_SECTIONS
from knnattn.lemmas.config import Lemma1Config
from knnattn.lemmas.config import Lemma2Config
from knnattn.lemmas.config import Lemma3Config
from knnattn.lemmas.experiments import lemma1_experiment
from knnattn.lemmas.experiments import lemma2_experiment
from knnattn.lemmas.experiments import lemma3_sweep
from knnattn.lemmas.experiments import write_result
from knnattn.numerics.rng import RngStream
from knnattn.utils.config import default_out_dir
from knnattn.utils.config import load_config
from knnattn.utils.config import split_sections
from knnattn.utils.config import versioned
from knnattn.utils.exceptions import CheckpointError
from knnattn.utils.exceptions import ConfigError
from knnattn.utils.exceptions import KnnAttentionError
from knnattn.utils.exceptions import NumericalAbort
from knnattn.utils.exceptions import SelectionError
from knnattn.utils.exceptions import ShapeError
from knnattn.utils.exceptions import TieError
from knnattn.utils.logger import get_logger
from knnattn.vit.checkpoint import load_checkpoint
from knnattn.vit.config import ModelConfig
from knnattn.vit.config import SyntheticTaskConfig
from knnattn.vit.config import TrainConfig
from knnattn.vit.dataset import generate_synthetic
from knnattn.vit.model import build_model
from knnattn.vit.model import capture_trace
from knnattn.vit.trainer import Trainer
from knnattn.vit.trainer import build_for_seed
from knnattn.vit.trainer import compare_runs
from knnattn.vit.trainer import confusion_matrix
from knnattn.vit.trainer import evaluate

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_INVALID_INPUT = 2
EXIT_NUMERICAL_ABORT = 3

TRAIN_SECTIONS = ("model", "train", "task", "run")


def read_sections(path, allowed):
    if path is None:
        return {section: None for section in allowed}
    return split_sections(load_config(path), allowed, source=path)


def out_dir_of(args):
    return args.out if args.out is not None else os.path.join(default_out_dir(), args.subcommand)


def emit(args, payload, text):
    print(json.dumps(payload, indent=2, sort_keys=True) if args.json else text)


def parse_sizes(sizes, k_grid=None):
    """
    "196:64,98:32" or "196:64:100" -> [[n, d, k], ...]; every k of k_grid is paired with every size.
    """
    parsed = list()
    for size in sizes.split(","):
        parts = [int(part) for part in size.split(":")]
        if len(parts) not in (2, 3):
            raise ConfigError("size {size} must be n:d or n:d:k".format(size=size))
        if k_grid:
            parsed.extend([parts[0], parts[1], k] for k in k_grid)
        else:
            parsed.append(parts + [None] * (3 - len(parts)))
    return parsed


def cmd_verify(args):
    logger = get_logger('Verify', 'DEBUG' if args.debug else 'INFO')
    sections = read_sections(args.config, ("verify",))

    cfg = VerifyConfig.from_dict(sections["verify"])
    overrides = {name: getattr(args, name) for name in ("instances", "seed", "tolerance")
                 if getattr(args, name) is not None}
    cfg = cfg.replace(**overrides)

    out_dir = out_dir_of(args)
    manifest = RunManifest("verify", args.config, versioned({"verify": cfg.to_dict()}), cfg.seed, out_dir)
    manifest.begin()

    results = Verifier(cfg, debug=args.debug).run()
    frame = results_frame(results)
    frame.to_csv(os.path.join(out_dir, "verify.csv"), index=False, encoding="utf-8")
    with open(os.path.join(out_dir, "verify.json"), "w") as outfile:
        json.dump([result.to_dict() for result in results], outfile, indent=2)

    emit(args, [result.to_dict() for result in results], frame.to_string(index=False))
    manifest.finish()

    failed = [result.check for result in results if not result.passed]
    if failed:
        logger.error("Failed checks: {checks}".format(checks=", ".join(failed)))
        return EXIT_CHECK_FAILED
    return EXIT_OK


def cmd_lemma(args):
    sections = read_sections(args.config, LEMMA_SECTIONS)
    threads = args.threads if args.threads is not None else 1
    out_dir = out_dir_of(args)

    cluster = ClusterModelConfig.from_dict(sections["cluster"])
    if args.seed is not None:
        cluster = cluster.replace(seed=args.seed)

    if args.which == 1:
        cfg = Lemma1Config.from_dict(sections["lemma1"])
        if args.seed is not None:
            cfg = cfg.replace(seed=args.seed)
        snapshot = versioned({"lemma1": cfg.to_dict()})
        seed = cfg.seed
    elif args.which == 2:
        cfg = Lemma2Config.from_dict(sections["lemma2"])
        snapshot = versioned({"cluster": cluster.to_dict(), "lemma2": cfg.to_dict()})
        seed = cluster.seed
    else:
        cfg = Lemma3Config.from_dict(sections["lemma3"])
        snapshot = versioned({"cluster": cluster.to_dict(), "lemma3": cfg.to_dict()})
        seed = cluster.seed

    manifest = RunManifest("lemma{which}".format(which=args.which), args.config, snapshot, seed, out_dir)
    manifest.begin()

    if args.which == 1:
        result = lemma1_experiment(cfg.n, cfg.d_m, cfg.d, cfg.top_k, cfg.trials, cfg.seed, batch=cfg.batch,
                                   tolerance=cfg.tolerance, h=cfg.h, threads=threads, debug=args.debug)
    elif args.which == 2:
        result = lemma2_experiment(cluster.replace(trials=cfg.trials), d_grid=cfg.d_grid,
                                   query_model=cfg.query_model, threads=threads, debug=args.debug)
    else:
        result = lemma3_sweep(cluster.replace(trials=cfg.trials), sigmas=cfg.sigmas, k_grid=cfg.k_grid,
                              threads=threads, debug=args.debug)

    write_result(result, out_dir)
    emit(args, result.to_dict(), str(result))
    manifest.finish()

    return EXIT_OK if result.passed else EXIT_CHECK_FAILED


def _train_configs(args, sections, checkpoint=None):
    if checkpoint is not None:
        model_cfg = ModelConfig.from_dict(checkpoint.configs["model"])
        task_cfg = SyntheticTaskConfig.from_dict(checkpoint.configs["task"])
        train_section = sections["train"] if sections["train"] is not None else checkpoint.configs["train"]
        train_cfg = TrainConfig.from_dict(train_section)
    else:
        model_cfg = ModelConfig.from_dict(sections["model"])
        train_cfg = TrainConfig.from_dict(sections["train"])
        task_cfg = SyntheticTaskConfig.from_dict(sections["task"])

    if args.seed is not None:
        train_cfg = train_cfg.replace(seed=args.seed)
        task_cfg = task_cfg.replace(seed=args.seed)
    if getattr(args, "threads", None) is not None:
        train_cfg = train_cfg.replace(threads=args.threads)

    if not task_cfg.conforms(model_cfg):
        raise ConfigError("task (grid {grid}, patch_dim {dim}, {classes} classes) does not fit the model".format(
            grid=task_cfg.grid, dim=task_cfg.patch_dim, classes=task_cfg.classes))
    return model_cfg, train_cfg, task_cfg


def cmd_train(args):
    logger = get_logger('Train', 'DEBUG' if args.debug else 'INFO')
    sections = read_sections(args.config, TRAIN_SECTIONS)
    run = RunConfig.from_dict(sections["run"]).with_flags(compare=args.compare, seeds=args.seeds,
                                                          resume=args.resume)

    checkpoint = load_checkpoint(run.resume) if run.resume is not None else None
    model_cfg, train_cfg, task_cfg = _train_configs(args, sections, checkpoint)

    out_dir = out_dir_of(args)
    configs = {"model": model_cfg.to_dict(), "train": train_cfg.to_dict(), "task": task_cfg.to_dict()}
    snapshot = versioned(dict(configs, run={"compare": run.compare, "seeds": run.seeds, "resume": run.resume}))
    manifest = RunManifest("train", args.config, snapshot, train_cfg.seed, out_dir)
    manifest.begin()

    if run.compare is not None:
        arms = [arm.strip() for arm in run.compare.split(",") if arm.strip()]
        seeds = list(range(train_cfg.seed, train_cfg.seed + run.seeds))
        summary = compare_runs(model_cfg, train_cfg, task_cfg, arms, seeds, out_dir=out_dir, debug=args.debug)
        emit(args, summary.to_dict(orient="records"), summary.to_string(index=False))
        manifest.finish()
        return EXIT_OK

    train_set, eval_set = generate_synthetic(task_cfg)
    model = build_for_seed(model_cfg, train_cfg.seed)
    logger.info(str(model))

    trainer = Trainer(train_cfg, out_dir=out_dir, configs=configs, name="metrics", debug=args.debug)
    history = trainer.train(model, train_set, eval_set, resume=checkpoint)

    final = history[-1].to_dict() if history else dict()
    emit(args, final, "Final epoch: {row}".format(row=history[-1] if history else None))
    manifest.finish()
    return EXIT_OK


def _load_trained(args):
    """
    :return: (model, task config, dataset split, RunConfig with the checkpoint and split in use)
    """
    sections = read_sections(args.config, TRAIN_SECTIONS)
    run = RunConfig.from_dict(sections["run"]).with_flags(checkpoint=args.checkpoint, split=args.split)
    if run.checkpoint is None:
        raise ConfigError("no checkpoint given, neither as argument nor in the run section of the config")

    checkpoint = load_checkpoint(run.checkpoint)
    try:
        model_cfg = ModelConfig.from_dict(checkpoint.configs["model"])
        task_section = checkpoint.configs["task"]
    except KeyError as e:
        raise CheckpointError("checkpoint lacks the {section} config".format(section=e))

    if sections["task"] is not None:
        task_section = sections["task"]
    task_cfg = SyntheticTaskConfig.from_dict(task_section)

    # parameters are overwritten by the checkpoint, the stream only shapes the arrays
    model = build_model(model_cfg, RngStream(0))
    checkpoint.load_into(model)

    train_set, eval_set = generate_synthetic(task_cfg)
    dataset = train_set if run.split == "train" else eval_set
    return model, task_cfg, dataset, run


def cmd_eval(args):
    model, task_cfg, dataset, run = _load_trained(args)
    out_dir = out_dir_of(args)

    snapshot = versioned({"task": task_cfg.to_dict(), "run": {"checkpoint": run.checkpoint, "split": run.split}})
    manifest = RunManifest("eval", args.config, snapshot, task_cfg.seed, out_dir)
    manifest.begin()

    threads = args.threads if args.threads is not None else 1
    accuracy = evaluate(model, dataset, threads=threads)
    payload = {
        "checkpoint": run.checkpoint,
        "split": run.split,
        "accuracy": accuracy,
        "confusion_matrix": confusion_matrix(model, dataset, threads=threads).tolist(),
    }
    with open(os.path.join(out_dir, "eval.json"), "w") as outfile:
        json.dump(payload, outfile, indent=2, sort_keys=True)

    emit(args, payload, "accuracy: {accuracy:.4f}".format(accuracy=accuracy))
    manifest.finish()
    return EXIT_OK


def cmd_diagnose(args):
    model, task_cfg, dataset, run = _load_trained(args)
    out_dir = out_dir_of(args)

    snapshot = versioned({"task": task_cfg.to_dict(), "run": {"checkpoint": run.checkpoint, "split": run.split}})
    manifest = RunManifest("diagnose", args.config, snapshot, task_cfg.seed, out_dir)
    manifest.begin()

    report = diagnose(capture_trace(model, dataset.images[:1]))
    write_report(report, out_dir)

    emit(args, report.to_dict(), str(report))
    manifest.finish()
    return EXIT_OK


def cmd_bench(args):
    sections = read_sections(args.config, ("bench",))
    cfg = BenchConfig.from_dict(sections["bench"])

    overrides = dict()
    if args.sizes is not None or args.k_grid is not None:
        sizes = args.sizes if args.sizes is not None else ",".join(
            "{n}:{d}".format(n=n, d=d) for n, d, _ in cfg.sizes)
        k_grid = [int(k) for k in args.k_grid.split(",")] if args.k_grid is not None else None
        overrides["sizes"] = parse_sizes(sizes, k_grid)
    if args.reps is not None:
        overrides["reps"] = args.reps
    if args.seed is not None:
        overrides["seed"] = args.seed
    cfg = cfg.replace(**overrides)

    out_dir = out_dir_of(args)
    manifest = RunManifest("bench", args.config, versioned({"bench": cfg.to_dict()}), cfg.seed, out_dir)
    manifest.begin()

    rows, violations = Benchmark(cfg, debug=args.debug).run()
    frame = bench_frame(rows)
    frame.to_csv(os.path.join(out_dir, "bench.csv"), index=False, encoding="utf-8")

    emit(args, {"rows": frame.to_dict(orient="records"), "violations": violations}, frame.to_string(index=False))
    manifest.finish()
    return EXIT_CHECK_FAILED if violations else EXIT_OK


def _common_flags(parser):
    parser.add_argument('--config', help='path to a JSON config or run manifest', type=str)
    parser.add_argument('--out', help='output directory (default: $KNN_ATTN_OUT/<subcommand>)', type=str)
    parser.add_argument('--seed', help='seed overriding the config', type=int)
    parser.add_argument('--threads', help='worker threads, 1 is the deterministic path', type=int)
    parser.add_argument('--json', help='print machine-readable output', action='store_true')
    parser.add_argument('-d', '--debug', help='enable debug output', action='store_true')


def build_parser():
    parser = argparse.ArgumentParser(description="k-NN attention toolkit")
    subparsers = parser.add_subparsers(dest="subcommand")
    subparsers.required = True

    verify = subparsers.add_parser('verify', help='run the kernel, gradient, metric and model property suites')
    _common_flags(verify)
    verify.add_argument('--tolerance', help='relative error bound of the gradient checks', type=float)
    verify.add_argument('--instances', help='random instances per check', type=int)

    lemma = subparsers.add_parser('lemma', help='Monte-Carlo experiment of one lemma')
    lemma.add_argument('which', help='lemma number', type=int, choices=[1, 2, 3])
    _common_flags(lemma)

    train = subparsers.add_parser('train', help='train the toy vision transformer')
    _common_flags(train)
    train.add_argument('--compare', help='paired arms, e.g. dense,knn or knn:8,dense', type=str)
    train.add_argument('--seeds', help='number of consecutive seeds in paired mode (default 1)', type=int)
    train.add_argument('--resume', help='checkpoint to continue from', type=str)

    for name, help_text in (('eval', 'accuracy of a checkpoint'), ('diagnose', 'attention diagnostics report')):
        sub = subparsers.add_parser(name, help=help_text)
        _common_flags(sub)
        sub.add_argument('checkpoint', help='path to a checkpoint, may come from the run section of --config',
                         type=str, nargs='?')
        sub.add_argument('--split', help='dataset split (default eval)', choices=SPLITS)

    bench = subparsers.add_parser('bench', help='wall time of dense, fast and slow k-NN attention')
    _common_flags(bench)
    bench.add_argument('--sizes', help='comma separated n:d or n:d:k', type=str)
    bench.add_argument('--k-grid', dest='k_grid', help='comma separated k values for every size', type=str)
    bench.add_argument('--reps', help='repetitions per kernel', type=int)

    return parser


COMMANDS = {
    "verify": cmd_verify,
    "lemma": cmd_lemma,
    "train": cmd_train,
    "eval": cmd_eval,
    "diagnose": cmd_diagnose,
    "bench": cmd_bench,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logger = get_logger('KnnAttention', 'DEBUG' if args.debug else 'INFO')

    try:
        return COMMANDS[args.subcommand](args)
    except NumericalAbort as e:
        logger.error(str(e))
        return EXIT_NUMERICAL_ABORT
    except (ConfigError, ShapeError, CheckpointError, SelectionError, TieError, IOError, ValueError) as e:
        logger.error("invalid input: {error}".format(error=e))
        return EXIT_INVALID_INPUT
    except KnnAttentionError as e:
        logger.error("{kind}: {error}".format(kind=type(e).__name__, error=e))
        return EXIT_INVALID_INPUT
