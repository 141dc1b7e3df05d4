#!/usr/bin/env python

import math

import numpy as np
import pandas as pd

from knnattn.attention.gradients import attention_backward
from knnattn.attention.kernels import attention_scores
from knnattn.attention.kernels import dense_attention
from knnattn.attention.kernels import knn_attention_fast
from knnattn.attention.kernels import knn_attention_slow
from knnattn.attention.kernels import masked_attention
from knnattn.attention.kernels import row_entropy
from knnattn.attention.selection import row_topk_mask
from knnattn.attention.selection import selection_margin
from knnattn.diagnostics.metrics import attn_std
from knnattn.diagnostics.metrics import branch_ratio
from knnattn.diagnostics.metrics import cos_sim
from knnattn.diagnostics.metrics import nonlocality
from knnattn.lemmas.experiments import lemma1_experiment
from knnattn.numerics.gradcheck import finite_diff_entry
from knnattn.numerics.gradcheck import finite_diff_grad
from knnattn.numerics.gradcheck import relative_error
from knnattn.numerics.matrix import identity
from knnattn.numerics.matrix import matmul
from knnattn.numerics.matrix import softmax_rows
from knnattn.numerics.rng import RngStream
from knnattn.utils.config import ConfigBase
from knnattn.utils.exceptions import TieError
from knnattn.utils.logger import get_logger
from knnattn.vit.config import ModelConfig
from knnattn.vit.model import build_model
from knnattn.vit.model import cross_entropy
from knnattn.vit.model import loss_and_backward

SUITES = ("equivalence", "mask", "temperature", "gradient", "metrics", "model")
RESULT_COLUMNS = ["check", "suite", "status", "value", "threshold", "detail"]

EXACT_TOLERANCE = 1e-12
SLOW_FAST_TOLERANCE = 1e-13
MIN_MARGIN = 1e-3
TIE_MARGIN = 1e-9
MAX_REDRAWS = 100
TEMPERATURES = (0.25, 0.5, 1.0, 2.0, 4.0)
MODEL_KINDS = ("dense", "knn")


class VerifyConfig(ConfigBase):
    FIELDS = (
        ("instances", 100),
        ("seed", 0),
        ("tolerance", 1e-5),
        ("max_n", 64),
        ("max_d", 32),
    )

    def validate(self):
        self.require(self.instances >= 1, "instances must be positive")
        self.require(self.tolerance >= 0, "tolerance must not be negative")
        self.require(self.max_n >= 2 and self.max_d >= 1, "max_n must be at least 2 and max_d positive")

    @property
    def capped_instances(self):
        # gradient and full-model suites run at most 50 instances
        return min(self.instances, 50)


class CheckResult(object):
    """
    Outcome of one check: the worst value seen over all instances against its threshold.
    """
    def __init__(self, check, suite, passed, value, threshold, detail=""):
        self.check = check
        self.suite = suite
        self.passed = bool(passed)
        self.value = float(value)
        self.threshold = float(threshold)
        self.detail = detail

    @property
    def status(self):
        return "PASS" if self.passed else "FAIL"

    def __str__(self):
        return "{status} {check} ({suite}): {value:.3g} vs {threshold:.3g} {detail}".format(
            status=self.status, check=self.check, suite=self.suite, value=self.value, threshold=self.threshold,
            detail=self.detail).strip()

    def to_dict(self):
        return {"check": self.check, "suite": self.suite, "status": self.status, "value": self.value,
                "threshold": self.threshold, "detail": self.detail}


def results_frame(results):
    return pd.DataFrame([result.to_dict() for result in results], columns=RESULT_COLUMNS)


def oracle_cos_sim(tokens):
    n = len(tokens)
    total = 0.0
    for i in range(n):
        for j in range(n):
            if i != j:
                dot = sum(a * b for a, b in zip(tokens[i], tokens[j]))
                total += dot / (math.sqrt(sum(a * a for a in tokens[i])) * math.sqrt(sum(b * b for b in tokens[j])))
    return total / (n * (n - 1))


def oracle_attn_std(attention):
    head_values = list()
    for head in attention:
        row_values = list()
        for row in head:
            row_mean = sum(row) / len(row)
            row_values.append(math.sqrt(sum((a - row_mean) ** 2 for a in row) / len(row)))
        head_values.append(sum(row_values) / len(row_values))
    return sum(head_values) / len(head_values)


def oracle_branch_ratio(branch, block_input):
    return math.sqrt(sum(a * a for row in branch for a in row)) / \
        math.sqrt(sum(a * a for row in block_input for a in row))


def oracle_nonlocality(attention, grid, cls_present):
    rows, cols = grid
    offset = 1 if cls_present else 0
    head_values = list()
    for head in attention:
        query_values = list()
        for i in range(rows * cols):
            mass = sum(head[offset + i][offset + j] for j in range(rows * cols))
            if mass <= 0:
                continue
            distance = 0.0
            for j in range(rows * cols):
                dr, dc = i // cols - j // cols, i % cols - j % cols
                distance += head[offset + i][offset + j] / mass * math.sqrt(dr * dr + dc * dc)
            query_values.append(distance)
        head_values.append(sum(query_values) / len(query_values) if query_values else 0.0)
    return sum(head_values) / len(head_values)


class Verifier(object):
    """
    Property suites over random instances. Every check reports its worst case.
    """
    def __init__(self, cfg, debug=False):
        self.logger = get_logger('Verifier', 'DEBUG' if debug else 'INFO')
        self.cfg = cfg
        self.rng = RngStream(cfg.seed)

    def run(self, suites=SUITES):
        results = list()
        for suite in suites:
            self.logger.info("Running suite {suite}".format(suite=suite))
            suite_results = getattr(self, "suite_{suite}".format(suite=suite))()
            for result in suite_results:
                log = self.logger.info if result.passed else self.logger.error
                log(str(result))
            results.extend(suite_results)
        return results

    def _instance(self, stream, max_n=None, max_d=None):
        max_n = self.cfg.max_n if max_n is None else max_n
        max_d = self.cfg.max_d if max_d is None else max_d
        n = int(stream.integers(2, max_n + 1))
        d = int(stream.integers(1, max_d + 1))
        d_v = int(stream.integers(1, max_d + 1))
        return stream.normal((n, d)), stream.normal((n, d)), stream.normal((n, d_v))

    def _tie_free_instance(self, stream, max_n=None, max_d=None, min_margin=MIN_MARGIN):
        for attempt in range(MAX_REDRAWS):
            draw = stream.child(attempt)
            Q, K, V = self._instance(draw, max_n, max_d)
            k = int(draw.integers(1, Q.shape[0] + 1))
            if selection_margin(attention_scores(Q, K), k) >= min_margin:
                return Q, K, V, k
        raise TieError("no tie-free attention instance in {num} draws".format(num=MAX_REDRAWS))

    def suite_equivalence(self):
        stream = self.rng.child(1)

        worst_reduction = 0.0
        for i in range(self.cfg.instances):
            Q, K, V = self._instance(stream.child(0, i))
            knn_output, _, _ = knn_attention_fast(Q, K, V, Q.shape[0])
            dense_output, _ = dense_attention(Q, K, V)
            worst_reduction = max(worst_reduction, float(np.max(np.abs(knn_output - dense_output))))

        worst_slow_fast = 0.0
        selection_mismatches = 0
        for i in range(self.cfg.instances):
            Q, K, V, k = self._tie_free_instance(stream.child(1, i), min_margin=TIE_MARGIN)
            fast_output, _, mask = knn_attention_fast(Q, K, V, k)
            slow_output, neighbors = knn_attention_slow(Q, K, V, k)
            if any(not np.array_equal(a, b) for a, b in zip(mask.indices(), neighbors)):
                selection_mismatches += 1
            worst_slow_fast = max(worst_slow_fast, float(np.max(np.abs(fast_output - slow_output))))

        euclidean_mismatches = 0
        for i in range(self.cfg.instances):
            Q, K, V, k = self._tie_free_instance(stream.child(2, i), min_margin=TIE_MARGIN)
            Q = Q / np.linalg.norm(Q, axis=1, keepdims=True)
            K = K / np.linalg.norm(K, axis=1, keepdims=True)
            _, by_dot = knn_attention_slow(Q, K, V, k, selection_metric="dot")
            _, by_distance = knn_attention_slow(Q, K, V, k, selection_metric="euclidean")
            if any(not np.array_equal(a, b) for a, b in zip(by_dot, by_distance)):
                euclidean_mismatches += 1

        return [
            CheckResult("exact_reduction", "equivalence", worst_reduction <= EXACT_TOLERANCE, worst_reduction,
                        EXACT_TOLERANCE, "k=n vs dense"),
            CheckResult("slow_fast_equivalence", "equivalence",
                        selection_mismatches == 0 and worst_slow_fast <= SLOW_FAST_TOLERANCE, worst_slow_fast,
                        SLOW_FAST_TOLERANCE, "{num} selection mismatches".format(num=selection_mismatches)),
            CheckResult("euclidean_unit_norm", "equivalence", euclidean_mismatches == 0, euclidean_mismatches, 0,
                        "unit-norm rows select alike under both metrics"),
        ]

    def suite_mask(self):
        stream = self.rng.child(2)

        wrong_counts = 0
        worst_sum = 0.0
        for i in range(self.cfg.instances):
            Q, K, V = self._instance(stream.child(i))
            k = int(stream.child(i, 0).integers(1, Q.shape[0] + 1))
            _, attention, _ = knn_attention_fast(Q, K, V, k)
            wrong_counts += int(np.count_nonzero(np.count_nonzero(attention, axis=1) != k))
            worst_sum = max(worst_sum, float(np.max(np.abs(np.sum(attention, axis=1) - 1.0))))

        return [
            CheckResult("mask_nonzeros", "mask", wrong_counts == 0, wrong_counts, 0, "rows without exactly k nonzeros"),
            CheckResult("mask_row_sums", "mask", worst_sum <= EXACT_TOLERANCE, worst_sum, EXACT_TOLERANCE),
        ]

    def suite_temperature(self):
        stream = self.rng.child(3)

        identity_mismatches = 0
        decreases = 0
        for i in range(self.cfg.instances):
            Q, K, V = self._instance(stream.child(i))
            baseline = softmax_rows(matmul(Q, K.T) / np.sqrt(Q.shape[1]))
            _, attention = dense_attention(Q, K, V, temperature=1.0)
            if not np.array_equal(attention, baseline):
                identity_mismatches += 1

            scores = stream.child(i, 0).normal((Q.shape[0], Q.shape[0]), scale=3.0)
            entropies = [row_entropy(softmax_rows(scores / t)) for t in TEMPERATURES]
            for lower, higher in zip(entropies, entropies[1:]):
                decreases += int(np.count_nonzero(higher < lower - 1e-12))

        return [
            CheckResult("temperature_identity", "temperature", identity_mismatches == 0, identity_mismatches, 0,
                        "t=1 vs plain softmax"),
            CheckResult("entropy_monotone", "temperature", decreases == 0, decreases, 0,
                        "rows whose entropy drops as t grows"),
        ]

    def suite_gradient(self):
        stream = self.rng.child(4)
        tolerance = self.cfg.tolerance

        worst_backward = 0.0
        for i in range(self.cfg.capped_instances):
            Q, K, V, k = self._tie_free_instance(stream.child(0, i), max_n=8, max_d=4)
            mask = row_topk_mask(attention_scores(Q, K), k)
            upstream = stream.child(1, i).normal((Q.shape[0], V.shape[1]))

            grad_q, grad_k, grad_v = attention_backward(Q, K, V, mask, upstream)
            numeric_q = finite_diff_grad(lambda x: np.sum(upstream * masked_attention(x, K, V, mask)[0]), Q)
            numeric_k = finite_diff_grad(lambda x: np.sum(upstream * masked_attention(Q, x, V, mask)[0]), K)
            numeric_v = finite_diff_grad(lambda x: np.sum(upstream * masked_attention(Q, K, x, mask)[0]), V)

            error = relative_error(np.concatenate([grad_q.ravel(), grad_k.ravel(), grad_v.ravel()]),
                                   np.concatenate([numeric_q.ravel(), numeric_k.ravel(), numeric_v.ravel()]))
            worst_backward = max(worst_backward, error)

        lemma1 = lemma1_experiment(n=12, d_m=8, d=4, k=6, trials=self.cfg.capped_instances, seed=self.cfg.seed,
                                   tolerance=tolerance)
        worst_lemma1 = lemma1.details["max_rel_error"]

        worst_model = 0.0
        for i in range(self.cfg.capped_instances):
            kind = MODEL_KINDS[i % len(MODEL_KINDS)]
            worst_model = max(worst_model, self._model_gradient_error(kind, stream.child(2, i)))

        return [
            CheckResult("attention_backward", "gradient", worst_backward < tolerance, worst_backward, tolerance),
            CheckResult("lemma1_formula", "gradient", worst_lemma1 < tolerance, worst_lemma1, tolerance),
            CheckResult("model_gradient", "gradient", worst_model < tolerance, worst_model, tolerance,
                        "2-layer model, dense and knn"),
        ]

    def _model_gradient_error(self, kind, stream):
        cfg = ModelConfig(grid=[2, 2], input_dim=4, d_m=8, depth=2, heads=2, d=4, mlp_dim=16, kind=kind,
                          pooling="cls" if kind == "knn" else "gap", classes=3)

        for attempt in range(MAX_REDRAWS):
            draw = stream.child(attempt)
            model = build_model(cfg, draw.child(0))
            # move away from the small initialization so that scores and selection gaps are of order one
            for index, (name, value) in enumerate(model.named_parameters()):
                value += draw.child(1, index).normal(value.shape, scale=0.5)

            images = draw.child(2).normal((2, cfg.num_patches, cfg.input_dim))
            labels = draw.child(3).integers(0, cfg.classes, size=2)

            model.zero_grad()
            loss_and_backward(model, images, labels)
            if model.selection_margin() >= MIN_MARGIN:
                break
        else:
            raise TieError("no tie-free model instance in {num} draws".format(num=MAX_REDRAWS))

        analytic = list()
        numeric = list()
        gradients = dict(model.gradients())
        for index, (name, value) in enumerate(model.named_parameters()):
            entries = draw.child(4, index).integers(0, value.size, size=min(3, value.size))
            for flat in entries:
                entry = np.unravel_index(int(flat), value.shape)
                original = value.copy()

                def loss_at(x):
                    value[...] = x
                    return cross_entropy(model.forward(images), labels)[0]

                numeric.append(float(finite_diff_entry(loss_at, original, entry)))
                value[...] = original
                analytic.append(float(gradients[name][entry]))

        return relative_error(np.array(analytic), np.array(numeric))

    def suite_metrics(self):
        stream = self.rng.child(5)

        worst = 0.0
        for i in range(min(self.cfg.instances, 20)):
            draw = stream.child(i)
            rows, cols = int(draw.integers(1, 5)), int(draw.integers(2, 5))
            cls_present = bool(draw.integers(0, 2))
            n = rows * cols + (1 if cls_present else 0)
            heads = int(draw.integers(1, 4))

            tokens = draw.normal((n, 6))
            branch = draw.normal((n, 6))
            attention = softmax_rows(draw.normal((heads, n, n), scale=2.0))

            _, layer_mean = nonlocality(attention, (rows, cols), cls_present)
            worst = max(worst,
                        abs(cos_sim(tokens) - oracle_cos_sim(tokens.tolist())),
                        abs(attn_std(attention) - oracle_attn_std(attention.tolist())),
                        abs(branch_ratio(branch, tokens) - oracle_branch_ratio(branch.tolist(), tokens.tolist())),
                        abs(layer_mean - oracle_nonlocality(attention.tolist(), (rows, cols), cls_present)))

        _, identity_nonlocality = nonlocality(identity(12), (3, 4))

        return [
            CheckResult("metric_oracles", "metrics", worst <= EXACT_TOLERANCE, worst, EXACT_TOLERANCE,
                        "brute-force double loops"),
            CheckResult("identity_nonlocality", "metrics", identity_nonlocality == 0.0, identity_nonlocality, 0),
        ]

    def suite_model(self):
        stream = self.rng.child(6)

        worst = 0.0
        for i in range(self.cfg.capped_instances):
            dense_cfg = ModelConfig(kind="dense", pooling="cls")
            knn_cfg = dense_cfg.replace(kind="knn", k=dense_cfg.n_tokens)
            dense_model = build_model(dense_cfg, stream.child(i, 0))
            knn_model = build_model(knn_cfg, stream.child(i, 0))

            images = stream.child(i, 1).normal((4, dense_cfg.num_patches, dense_cfg.input_dim))
            worst = max(worst, float(np.max(np.abs(dense_model.forward(images) - knn_model.forward(images)))))

        return [CheckResult("model_knn_full_equals_dense", "model", worst <= EXACT_TOLERANCE, worst, EXACT_TOLERANCE)]
