#!/usr/bin/env python

import json
import os
from collections import OrderedDict
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pandas as pd

from knnattn.attention.config import ProjectionWeights
from knnattn.attention.gradients import attention_backward
from knnattn.attention.gradients import covariance_traces
from knnattn.attention.gradients import lemma1_analytic_grad
from knnattn.attention.gradients import lemma1_analytic_grad_wk
from knnattn.attention.gradients import projection_grads
from knnattn.attention.kernels import attention_scores
from knnattn.attention.kernels import dense_attention
from knnattn.attention.kernels import knn_attention_fast
from knnattn.attention.kernels import masked_attention
from knnattn.attention.kernels import project_qkv
from knnattn.attention.selection import TopKMask
from knnattn.attention.selection import check_k
from knnattn.attention.selection import row_topk_mask
from knnattn.attention.selection import selection_margin
from knnattn.lemmas.cluster_model import draw_separated_weights
from knnattn.lemmas.cluster_model import resolve_means
from knnattn.lemmas.cluster_model import sample_cluster_patches
from knnattn.numerics.gradcheck import finite_diff_entry
from knnattn.numerics.gradcheck import relative_error
from knnattn.numerics.matrix import matmul
from knnattn.numerics.matrix import population_std
from knnattn.numerics.rng import RngStream
from knnattn.utils.exceptions import TieError
from knnattn.utils.logger import get_logger

# a-priori acceptance thresholds on the fraction of passing trial batches
LEMMA1_THRESHOLD = 0.9
LEMMA2_THRESHOLD = 0.9
LEMMA3_THRESHOLD = 0.95
RHO_THRESHOLD = 0.9

DEFAULT_SIGMAS = (0.25, 0.5, 1.0)
DEFAULT_D_GRID = (16, 64, 256)
QUERY_MODELS = ("patch", "mixture")

# selection gaps below this are treated as ties for the frozen-mask gradient check
MIN_MARGIN = 1e-4
MAX_REDRAWS = 100


class SweepRow(object):
    def __init__(self, sweep_value, mean, std, trials):
        self.sweep_value = sweep_value
        self.mean = mean
        self.std = std
        self.trials = trials

    def __str__(self):
        return "{value}, {mean:.6g}, {std:.6g}, {trials}".format(value=self.sweep_value, mean=self.mean,
                                                                 std=self.std, trials=self.trials)


class LemmaResult(object):
    """
    Sample statistics of one lemma experiment. Every table holds one sweep variable (k, d_m or sigma) and becomes one
    CSV file.
    """
    def __init__(self, lemma, tables, criterion, passed, trials, pass_fraction=None, vacuous=False, details=None):
        self.lemma = lemma
        self.tables = tables
        self.criterion = criterion
        self.passed = passed
        self.trials = trials
        self.pass_fraction = pass_fraction
        self.vacuous = vacuous
        self.details = details if details is not None else dict()

        for rows in self.tables.values():
            assert all(row.trials == self.trials for row in rows), "every statistic must cover all trials"

    def __str__(self):
        status = "PASS" if self.passed else "FAIL"
        if self.vacuous:
            status += " (vacuous)"
        output = "Lemma {lemma}: {status}; criterion: {criterion}".format(lemma=self.lemma, status=status,
                                                                          criterion=self.criterion)
        if self.pass_fraction is not None:
            output += "; batch pass fraction {fraction:.3f}".format(fraction=self.pass_fraction)
        return output

    def to_frame(self, table):
        rows = self.tables[table]
        return pd.DataFrame({
            "sweep_value": [row.sweep_value for row in rows],
            "mean": [row.mean for row in rows],
            "std": [row.std for row in rows],
            "trials": [row.trials for row in rows],
            "criterion": [self.criterion] * len(rows),
            "pass": [self.passed] * len(rows),
        }, columns=["sweep_value", "mean", "std", "trials", "criterion", "pass"])

    def to_dict(self):
        return {
            "lemma": self.lemma,
            "criterion": self.criterion,
            "pass": self.passed,
            "vacuous": self.vacuous,
            "trials": self.trials,
            "pass_fraction": self.pass_fraction,
            "tables": {name: [vars(row) for row in rows] for name, rows in self.tables.items()},
            "details": self.details,
        }


def summarize(sweep_values, samples):
    """
    :param samples: (trials, len(sweep_values)) per-trial statistics
    :return: list of SweepRow, std with the population denominator
    """
    samples = np.asarray(samples, dtype=np.float64)
    means = np.mean(samples, axis=0)
    stds = population_std(samples, axis=0)
    return [SweepRow(value, float(means[i]), float(stds[i]), samples.shape[0]) for i, value in enumerate(sweep_values)]


def batches(num_trials, batch):
    return [slice(start, min(start + batch, num_trials)) for start in range(0, num_trials, batch)]


def batch_pass_fraction(a, b, batch, strict=True):
    """
    Fraction of consecutive trial batches in which the batch mean of a is below (strict) or at most the batch mean of
    b. A trailing partial batch counts like a full one.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    assert a.shape == b.shape and a.ndim == 1

    outcomes = list()
    for part in batches(a.shape[0], batch):
        mean_a, mean_b = np.mean(a[part]), np.mean(b[part])
        outcomes.append(mean_a < mean_b if strict else mean_a <= mean_b)
    return float(np.mean(outcomes))


def batch_monotone_fraction(samples, batch, increasing=False):
    """
    Fraction of trial batches whose column means are non-increasing (or non-decreasing) from left to right.
    :param samples: (trials, grid) per-trial statistics
    """
    samples = np.asarray(samples, dtype=np.float64)

    outcomes = list()
    for part in batches(samples.shape[0], batch):
        means = np.mean(samples[part], axis=0)
        steps = np.diff(means)
        outcomes.append(bool(np.all(steps >= 0)) if increasing else bool(np.all(steps <= 0)))
    return float(np.mean(outcomes))


def run_trials(trial, num_trials, threads=1):
    """
    Runs trial(0..num_trials-1), on a thread pool if threads > 1. Results come back in trial order.
    """
    if threads <= 1:
        return [trial(t) for t in range(num_trials)]

    with ThreadPoolExecutor(max_workers=threads) as executor:
        return list(executor.map(trial, range(num_trials)))


def _relevant_query(labels):
    return int(np.flatnonzero(labels)[0])


def lemma3_experiment(cfg, weights=None, k_grid=None, threads=1, debug=False):
    """
    Denoising by selection: sup-norm distance between the k-NN output of a relevant query and mu_rel W_V, together
    with the realized fraction rho_k of noisy patches among the selected ones, for every k of the grid. k1 and n are
    always part of the grid, k = n being full attention.
    :param weights: fixed ProjectionWeights, or None to draw separated tied projections per trial
    """
    logger = get_logger("Lemma3Experiment", 'DEBUG' if debug else 'INFO')

    k_grid = sorted(set(check_k(k, cfg.n) for k in (k_grid or list())) | {cfg.k1, cfg.n})
    means = resolve_means(cfg)
    relevant_mean = means[0]

    def trial(t):
        rng = RngStream(cfg.seed, key=(3, t))
        trial_weights = weights
        if trial_weights is None:
            trial_weights = draw_separated_weights(cfg, means[0], means[1], rng.child(0))

        X, labels = sample_cluster_patches(cfg, rng.child(1), means=means)
        l = _relevant_query(labels)
        Q, K, V = project_qkv(X, trial_weights)
        target = matmul(relevant_mean[None, :], trial_weights.w_v)[0]

        errors = np.zeros(len(k_grid))
        rhos = np.zeros(len(k_grid))
        for idx, k in enumerate(k_grid):
            output, _, mask = knn_attention_fast(Q[l:l + 1], K, V, k)
            errors[idx] = np.max(np.abs(output[0] - target))
            rhos[idx] = np.count_nonzero(mask.selected[0] & ~labels) / float(k)

        dense_output, _ = dense_attention(Q[l:l + 1], K, V)
        dense_error = float(np.max(np.abs(dense_output[0] - target)))
        logger.debug("trial {t}: error at k1 {e1:.4g}, at n {en:.4g}".format(t=t, e1=errors[k_grid.index(cfg.k1)],
                                                                          en=errors[-1]))
        return errors, rhos, dense_error

    outcomes = run_trials(trial, cfg.trials, threads=threads)
    errors = np.array([outcome[0] for outcome in outcomes])
    rhos = np.array([outcome[1] for outcome in outcomes])
    dense_errors = np.array([outcome[2] for outcome in outcomes])

    dense_matches = bool(np.array_equal(errors[:, -1], dense_errors))
    criterion = "mean error at k=k1 < mean error at k=n in >= {p:.0%} of {b}-trial batches".format(
        p=LEMMA3_THRESHOLD, b=cfg.batch)

    vacuous = cfg.k1 == cfg.n
    if vacuous:
        fraction = None
        passed = dense_matches
    else:
        fraction = batch_pass_fraction(errors[:, k_grid.index(cfg.k1)], errors[:, -1], cfg.batch)
        passed = dense_matches and fraction >= LEMMA3_THRESHOLD

    tables = OrderedDict()
    tables["error"] = summarize(k_grid, errors)
    tables["rho"] = summarize(k_grid, rhos)

    result = LemmaResult(3, tables, criterion, passed, cfg.trials, pass_fraction=fraction, vacuous=vacuous,
                         details={"sigma": cfg.sigma, "k_grid": k_grid, "dense_matches_full": dense_matches,
                                  "rho_k1": rhos[:, k_grid.index(cfg.k1)].tolist()})
    logger.info("sigma {sigma}: {result}".format(sigma=cfg.sigma, result=result))
    return result


def lemma3_sweep(cfg, sigmas=DEFAULT_SIGMAS, weights=None, k_grid=None, threads=1, debug=False):
    """
    lemma3_experiment for every sigma, plus the check that the realized rho at k=k1 does not grow as sigma shrinks.
    Trial streams are shared across sigma values.
    """
    logger = get_logger("Lemma3Experiment", 'DEBUG' if debug else 'INFO')

    sigmas = sorted(float(sigma) for sigma in sigmas)
    results = [lemma3_experiment(cfg.replace(sigma=sigma), weights=weights, k_grid=k_grid, threads=threads,
                                 debug=debug) for sigma in sigmas]

    tables = OrderedDict()
    for sigma, result in zip(sigmas, results):
        for name, rows in result.tables.items():
            tables["{name}_sigma={sigma:g}".format(name=name, sigma=sigma)] = rows

    rho_k1 = np.array([result.details["rho_k1"] for result in results]).T
    tables["rho_k1"] = summarize(sigmas, rho_k1)
    rho_fraction = batch_monotone_fraction(rho_k1, cfg.batch, increasing=True) if len(sigmas) > 1 else 1.0

    vacuous = all(result.vacuous for result in results)
    passed = all(result.passed for result in results) and rho_fraction >= RHO_THRESHOLD
    fractions = [result.pass_fraction for result in results if result.pass_fraction is not None]

    criterion = ("{first} for every sigma; rho at k=k1 non-increasing as sigma decreases in >= {p:.0%} of batches"
                 .format(first=results[0].criterion, p=RHO_THRESHOLD))
    details = {
        "sigmas": sigmas,
        "rho_monotone_fraction": rho_fraction,
        "per_sigma": [{"sigma": sigma, "pass": result.passed, "pass_fraction": result.pass_fraction}
                      for sigma, result in zip(sigmas, results)],
    }

    result = LemmaResult(3, tables, criterion, passed, cfg.trials, pass_fraction=min(fractions) if fractions else None,
                         vacuous=vacuous, details=details)
    logger.info(str(result))
    return result


def lemma2_experiment(cfg, d_grid=DEFAULT_D_GRID, query_model="patch", threads=1, debug=False):
    """
    Survivor count: number of patches whose score against the query reaches the lowest score of a relevant patch.
    For every d_m of the grid the cluster model is rebuilt with that dimension and the head dimension equal to it.
    :param query_model: "patch" uses the projected relevant patch, "mixture" a convex combination of relevant keys
                        plus Gaussian noise
    """
    logger = get_logger("Lemma2Experiment", 'DEBUG' if debug else 'INFO')

    if query_model not in QUERY_MODELS:
        raise ValueError("Unknown query model: {model}".format(model=query_model))

    d_grid = [int(d) for d in d_grid]
    configs = [cfg.replace(d_m=d, d=None, relevant_mean=None, noise_means=None) for d in d_grid]
    all_means = [resolve_means(d_cfg) for d_cfg in configs]

    def trial(t):
        counts = np.zeros(len(d_grid))
        for idx, (d_cfg, means) in enumerate(zip(configs, all_means)):
            rng = RngStream(cfg.seed, key=(2, t, d_grid[idx]))
            weights = draw_separated_weights(d_cfg, means[0], means[1], rng.child(0))
            X, labels = sample_cluster_patches(d_cfg, rng.child(1), means=means)
            Q, K, _ = project_qkv(X, weights)

            relevant = np.flatnonzero(labels)
            if query_model == "patch":
                query = Q[relevant[0]]
            else:
                beta = rng.child(2).generator.dirichlet(np.ones(len(relevant)))
                noise = rng.child(3).normal(d_cfg.head_dim, scale=d_cfg.sigma / np.sqrt(d_cfg.head_dim))
                query = matmul(beta[None, :], K[relevant])[0] + noise

            scores = matmul(query[None, :], K.T)[0]
            counts[idx] = np.count_nonzero(scores >= np.min(scores[relevant]))
        logger.debug("trial {t}: survivors {counts}".format(t=t, counts=counts.tolist()))
        return counts

    counts = np.array(run_trials(trial, cfg.trials, threads=threads))
    criterion = "mean survivor count non-increasing in d_m in >= {p:.0%} of {b}-trial batches".format(
        p=LEMMA2_THRESHOLD, b=cfg.batch)

    tables = OrderedDict()
    tables["survivors"] = summarize(d_grid, counts)

    vacuous = cfg.k1 == cfg.n
    if vacuous:
        # every patch is relevant, the count is n in every trial
        fraction = None
        passed = bool(np.all(counts == cfg.n))
    else:
        fraction = batch_monotone_fraction(counts, cfg.batch)
        passed = fraction >= LEMMA2_THRESHOLD

    result = LemmaResult(2, tables, criterion, passed, cfg.trials, pass_fraction=fraction, vacuous=vacuous,
                         details={"d_grid": d_grid, "query_model": query_model, "sigma": cfg.sigma})
    logger.info(str(result))
    return result


def draw_tie_free_instance(n, d_m, d, k, rng):
    """
    Gaussian patches and projections whose top-k selection has a clear margin in every row.
    """
    for attempt in range(MAX_REDRAWS):
        draw = rng.child(attempt)
        X = draw.normal((n, d_m))
        weights = ProjectionWeights.random(d_m, d, draw)
        Q, K, _ = project_qkv(X, weights)
        if selection_margin(attention_scores(Q, K), k) >= MIN_MARGIN:
            return X, weights, draw
    raise TieError("no tie-free instance in {num} draws (n={n}, k={k})".format(num=MAX_REDRAWS, n=n, k=k))


def _arm_statistics(X, weights, mask):
    """
    :return: (|grad W_Q|_inf, |grad W_K|_inf) of ||V_hat||_F^2 and the mean over query rows of tr Var_{a_l}(x)
    """
    Q, K, V = project_qkv(X, weights)
    if mask is None:
        mask = TopKMask.full((X.shape[0], X.shape[0]))
    output, attention = masked_attention(Q, K, V, mask)
    grad_q, grad_k, grad_v = attention_backward(Q, K, V, mask, 2.0 * output, attention=attention)
    grad_wq, grad_wk, _ = projection_grads(X, grad_q, grad_k, grad_v)
    trace = float(np.mean(covariance_traces(X, attention)))
    return float(np.max(np.abs(grad_wq))), float(np.max(np.abs(grad_wk))), trace


def lemma1_experiment(n, d_m, d, k, trials, seed, batch=20, tolerance=1e-5, h=1e-5, threads=1, debug=False):
    """
    (a) the closed-form derivatives of an output row with respect to single W_Q and W_K entries against central
    differences, the mask held fixed. (b) the covariance factor Var_{a_l}(x) of those derivatives: its trace, averaged
    over query rows, for k-NN against dense attention on the same instance. The k-NN row is the dense row restricted to
    the selected patches, so the dense covariance adds the spread between selected and dropped patches.

    The largest absolute entries of the W_Q and W_K gradients of ||V_hat||_F^2 are reported alongside. They are not
    part of the criterion: on Gaussian patches the covariance of fewer effectively weighted patches has a more
    concentrated spectrum and ||V_hat|| grows under selection, which outweighs the smaller trace.
    """
    logger = get_logger("Lemma1Experiment", 'DEBUG' if debug else 'INFO')
    k = check_k(k, n)

    def trial(t):
        X, weights, rng = draw_tie_free_instance(n, d_m, d, k, RngStream(seed, key=(1, t)))
        Q, K, V = project_qkv(X, weights)
        mask = row_topk_mask(attention_scores(Q, K), k)

        l = int(rng.integers(0, n))
        entry = (int(rng.integers(0, d_m)), int(rng.integers(0, d)))

        def output_wq(w_q):
            return masked_attention(matmul(X, w_q), K, V, mask)[0][l]

        def output_wk(w_k):
            return masked_attention(Q, matmul(X, w_k), V, mask)[0][l]

        error_wq = relative_error(lemma1_analytic_grad(X, weights, l, entry, mask=mask)[0],
                                  finite_diff_entry(output_wq, weights.w_q, entry, h=h))
        error_wk = relative_error(lemma1_analytic_grad_wk(X, weights, l, entry, mask=mask)[0],
                                  finite_diff_entry(output_wk, weights.w_k, entry, h=h))

        knn_wq, knn_wk, knn_trace = _arm_statistics(X, weights, mask)
        dense_wq, dense_wk, dense_trace = _arm_statistics(X, weights, None)
        logger.debug("trial {t}: rel. errors {eq:.3g}/{ek:.3g}, tr Var knn {kt:.4g} dense {dt:.4g}".format(
            t=t, eq=error_wq, ek=error_wk, kt=knn_trace, dt=dense_trace))
        return [error_wq, error_wk], [knn_trace, dense_trace], [knn_wq, dense_wq], [knn_wk, dense_wk]

    outcomes = run_trials(trial, trials, threads=threads)
    errors = np.array([outcome[0] for outcome in outcomes])
    traces = np.array([outcome[1] for outcome in outcomes])
    grad_wq = np.array([outcome[2] for outcome in outcomes])
    grad_wk = np.array([outcome[3] for outcome in outcomes])

    max_error = float(np.max(errors))
    fraction = batch_pass_fraction(traces[:, 0], traces[:, 1], batch, strict=False)
    passed = max_error < tolerance and fraction >= LEMMA1_THRESHOLD

    criterion = "max rel. error < {tol:g} and mean tr Var_a(x) for k={k} <= dense in >= {p:.0%} of {b}-trial " \
                "batches".format(tol=tolerance, k=k, p=LEMMA1_THRESHOLD, b=batch)

    # sweep value n is the dense arm
    tables = OrderedDict()
    tables["cov_trace"] = summarize([k, n], traces)
    tables["grad_wq"] = summarize([k, n], grad_wq)
    tables["grad_wk"] = summarize([k, n], grad_wk)
    tables["rel_error"] = summarize([k], np.max(errors, axis=1)[:, None])

    result = LemmaResult(1, tables, criterion, passed, trials, pass_fraction=fraction, vacuous=k == n,
                         details={"n": n, "d_m": d_m, "d": d, "k": k, "max_rel_error": max_error,
                                  "tolerance": tolerance,
                                  "wq_pass_fraction": batch_pass_fraction(grad_wq[:, 0], grad_wq[:, 1], batch,
                                                                          strict=False),
                                  "wk_pass_fraction": batch_pass_fraction(grad_wk[:, 0], grad_wk[:, 1], batch,
                                                                          strict=False)})
    logger.info(str(result))
    return result


def write_result(result, out_dir):
    """
    One CSV per table, lemma<id>_<table>.csv, and a JSON summary.
    :return: list of written paths
    """
    if not os.path.isdir(out_dir):
        os.makedirs(out_dir)

    paths = list()
    for table in result.tables:
        path = os.path.join(out_dir, "lemma{id}_{table}.csv".format(id=result.lemma, table=table))
        result.to_frame(table).to_csv(path, index=False, encoding="utf-8")
        paths.append(path)

    summary_path = os.path.join(out_dir, "lemma{id}_summary.json".format(id=result.lemma))
    with open(summary_path, "w") as outfile:
        json.dump(result.to_dict(), outfile, indent=2)
    paths.append(summary_path)

    return paths
