#!/usr/bin/env python

import unittest

import numpy as np

from knnattn.numerics.gradcheck import finite_diff_entry
from knnattn.numerics.gradcheck import relative_error
from knnattn.numerics.rng import RngStream
from knnattn.utils.exceptions import ConfigError
from knnattn.utils.exceptions import ShapeError
from knnattn.vit.config import ModelConfig
from knnattn.vit.layers import GELU
from knnattn.vit.layers import LayerNorm
from knnattn.vit.layers import Linear
from knnattn.vit.model import build_model
from knnattn.vit.model import capture_trace
from knnattn.vit.model import cross_entropy
from knnattn.vit.model import loss_and_backward
from knnattn.vit.optim import Adam


def expected_parameters(cfg):
    d_m = cfg.d_m
    block = 2 * d_m + 4 * d_m * d_m + d_m + 2 * d_m + d_m * cfg.mlp_dim + cfg.mlp_dim + cfg.mlp_dim * d_m + d_m
    total = cfg.input_dim * d_m + d_m + cfg.n_tokens * d_m + cfg.depth * block + 2 * d_m + d_m * cfg.classes + \
        cfg.classes
    if cfg.pooling == "cls":
        total += d_m
    return total


class VisionTransformerTest(unittest.TestCase):
    def setUp(self):
        self.rng = RngStream(17)
        self.micro = ModelConfig(grid=[2, 2], input_dim=4, d_m=8, depth=2, heads=2, d=4, mlp_dim=16, classes=3)

    def perturbed_model(self, cfg, stream, scale=0.5):
        model = build_model(cfg, stream.child(0))
        for index, (name, value) in enumerate(model.named_parameters()):
            value += stream.child(1, index).normal(value.shape, scale=scale)
        return model

    def test_config(self):
        cfg = ModelConfig()
        self.assertEqual(cfg.num_patches, 16)
        self.assertEqual(cfg.n_tokens, 16)
        self.assertEqual(cfg.top_k, 8)
        self.assertEqual(cfg.replace(pooling="cls").n_tokens, 17)
        self.assertEqual(cfg.replace(pooling="cls").top_k, 9)
        self.assertEqual(cfg.replace(k_rule="four_fifths").top_k, 13)
        self.assertIsNone(cfg.replace(kind="dense").top_k)

        for invalid in [{"d_m": 12}, {"kind": "sparse"}, {"k": 17}, {"k": 0}, {"pooling": "max"}, {"classes": 1},
                        {"temperature": 0.0}]:
            with self.assertRaises(ConfigError):
                cfg.replace(**invalid)

    def test_parameter_count(self):
        for cfg in [ModelConfig(), ModelConfig(pooling="cls"), self.micro, self.micro.replace(depth=3, mlp_dim=5)]:
            model = build_model(cfg, self.rng.child(0))
            self.assertEqual(model.num_parameters(), expected_parameters(cfg))

    def test_initialization(self):
        model = build_model(ModelConfig(pooling="cls"), self.rng.child(1))
        params = dict(model.named_parameters())

        self.assertTrue(np.all(np.abs(params["blocks.0.attn.w_q"]) <= 0.04))
        self.assertTrue(np.all(params["head.bias"] == 0.0))
        self.assertTrue(np.all(params["norm.gamma"] == 1.0))
        self.assertEqual(params["cls_token"].shape, (1, 1, 16))
        self.assertEqual(params["pos_embed"].shape, (1, 17, 16))

    def test_same_seed_same_model(self):
        first = build_model(self.micro, RngStream(5))
        second = build_model(self.micro, RngStream(5))
        images = self.rng.child(2).normal((3, 4, 4))

        for (name, a), (_, b) in zip(first.named_parameters(), second.named_parameters()):
            self.assertTrue(np.array_equal(a, b), "Parameter {name} differs".format(name=name))
        self.assertTrue(np.array_equal(first.forward(images), second.forward(images)))

    def test_full_k_equals_dense(self):
        for pooling in ("gap", "cls"):
            dense_cfg = ModelConfig(kind="dense", pooling=pooling)
            knn_cfg = dense_cfg.replace(kind="knn", k=dense_cfg.n_tokens)
            images = self.rng.child(3).normal((4, 16, 8))

            dense_logits = build_model(dense_cfg, RngStream(8)).forward(images)
            knn_logits = build_model(knn_cfg, RngStream(8)).forward(images)
            self.assertLessEqual(float(np.max(np.abs(dense_logits - knn_logits))), 1e-12)

    def test_forward_independent_of_batch(self):
        model = self.perturbed_model(self.micro, self.rng.child(4))
        images = self.rng.child(5).normal((5, 4, 4))
        logits = model.forward(images)

        for i in range(5):
            self.assertTrue(np.array_equal(logits[i], model.forward(images[i:i + 1])[0]))

    def tie_free_model(self, cfg, stream, images, labels):
        for attempt in range(0, 50):
            model = self.perturbed_model(cfg, stream.child(attempt))
            model.zero_grad()
            loss_and_backward(model, images, labels)
            if model.selection_margin() >= 1e-3:
                return model
        self.fail("no tie-free model instance")

    def test_gradients_match_finite_differences(self):
        labels = np.array([0, 2])
        for kind, pooling in [("dense", "gap"), ("knn", "gap"), ("knn", "cls")]:
            cfg = self.micro.replace(kind=kind, pooling=pooling)
            for instance in range(0, 17):
                stream = self.rng.child(6, instance)
                images = stream.child(2).normal((2, 4, 4))
                model = self.tie_free_model(cfg, stream.child(1), images, labels)

                gradients = dict(model.gradients())
                analytic = list()
                numeric = list()
                for index, (name, value) in enumerate(model.named_parameters()):
                    entry = np.unravel_index(int(stream.child(3, index).integers(0, value.size)), value.shape)
                    original = value.copy()

                    def loss_at(x):
                        value[...] = x
                        return cross_entropy(model.forward(images), labels)[0]

                    numeric.append(float(finite_diff_entry(loss_at, original, entry)))
                    value[...] = original
                    analytic.append(float(gradients[name][entry]))

                self.assertLess(relative_error(np.array(analytic), np.array(numeric)), 1e-5,
                                "Gradient mismatch for {kind}/{pooling}, instance {i}".format(
                                    kind=kind, pooling=pooling, i=instance))

    def test_gradients_accumulate(self):
        model = build_model(self.micro, self.rng.child(7))
        images = self.rng.child(8).normal((2, 4, 4))
        labels = np.array([1, 0])

        loss_and_backward(model, images, labels)
        once = {name: grad.copy() for name, grad in model.gradients()}
        loss_and_backward(model, images, labels)
        for name, grad in model.gradients():
            self.assertTrue(np.allclose(grad, 2.0 * once[name], rtol=1e-12, atol=0))

        model.zero_grad()
        self.assertTrue(all(np.all(grad == 0.0) for _, grad in model.gradients()))

    def test_cross_entropy(self):
        loss, losses, grad = cross_entropy(np.zeros((3, 4)), np.array([0, 1, 3]))

        self.assertAlmostEqual(loss, np.log(4.0), places=14)
        self.assertTrue(np.allclose(losses, np.log(4.0)))
        self.assertTrue(np.allclose(np.sum(grad, axis=1), 0.0, atol=1e-15))
        self.assertAlmostEqual(grad[0, 0], (0.25 - 1.0) / 3.0, places=14)

        with self.assertRaises(ShapeError):
            cross_entropy(np.zeros((3, 4)), np.array([0, 1]))

    def test_adam_step_decreases_loss(self):
        decreases = 0
        for trial in range(0, 20):
            stream = self.rng.child(9, trial)
            model = build_model(self.micro, stream.child(0))
            images = stream.child(1).normal((4, 4, 4))
            labels = stream.child(2).integers(0, 3, size=4)

            model.zero_grad()
            before, _ = loss_and_backward(model, images, labels)
            Adam(model.parameters(), lr=1e-4).step(model.gradients())
            after = cross_entropy(model.forward(images), labels)[0]
            decreases += int(after < before)

        self.assertGreaterEqual(decreases, 19)

    def test_adam_zero_lr(self):
        model = build_model(self.micro, self.rng.child(10))
        before = {name: value.copy() for name, value in model.named_parameters()}
        loss_and_backward(model, self.rng.child(11).normal((2, 4, 4)), np.array([0, 1]))

        Adam(model.parameters(), lr=0.0).step(model.gradients())
        for name, value in model.named_parameters():
            self.assertTrue(np.array_equal(value, before[name]))

    def test_capture_trace(self):
        cfg = self.micro.replace(kind="knn", k=2, pooling="cls")
        model = build_model(cfg, self.rng.child(12))
        trace = capture_trace(model, self.rng.child(13).normal((3, 4, 4)))

        self.assertEqual(len(trace.layers), 2)
        self.assertTrue(trace.cls_present)
        self.assertEqual(trace.grid, (2, 2))
        for layer in trace.layers:
            self.assertEqual(layer.attention.shape, (2, 5, 5))
            self.assertTrue(np.all(np.count_nonzero(layer.attention, axis=-1) == 2))

    def test_layers(self):
        stream = self.rng.child(14)
        linear = Linear(3, 2, stream)
        x = stream.normal((4, 3))
        self.assertTrue(np.allclose(linear.forward(x), x.dot(linear.params["weight"]), rtol=0, atol=1e-15))
        with self.assertRaises(ShapeError):
            linear.forward(np.ones((4, 2)))

        norm = LayerNorm(5)
        normalized = norm.forward(stream.normal((3, 5)) * 4.0 + 2.0)
        self.assertTrue(np.allclose(np.mean(normalized, axis=1), 0.0, atol=1e-12))
        self.assertTrue(np.allclose(np.var(normalized, axis=1), 1.0, atol=1e-5))

        gelu = GELU()
        self.assertEqual(float(gelu.forward(np.array([0.0]))[0]), 0.0)
        self.assertAlmostEqual(float(gelu.forward(np.array([10.0]))[0]), 10.0, places=10)

        with self.assertRaises(ShapeError):
            build_model(self.micro, stream).forward(np.ones((2, 4, 5)))


if __name__ == "__main__":
    unittest.main()
