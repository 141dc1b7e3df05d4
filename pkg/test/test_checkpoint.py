#!/usr/bin/env python

import json
import os
import shutil
import tempfile
import unittest

import numpy as np

from knnattn.numerics.rng import RngStream
from knnattn.utils.exceptions import CheckpointError
from knnattn.vit.checkpoint import HEADER_LENGTH_BYTES
from knnattn.vit.checkpoint import MAGIC
from knnattn.vit.checkpoint import load_checkpoint
from knnattn.vit.checkpoint import save_checkpoint
from knnattn.vit.config import ModelConfig
from knnattn.vit.model import build_model
from knnattn.vit.model import loss_and_backward
from knnattn.vit.optim import Adam


class CheckpointTest(unittest.TestCase):
    def setUp(self):
        self.tmp_dir = tempfile.mkdtemp()
        self.path = os.path.join(self.tmp_dir, "model.ckpt")
        self.cfg = ModelConfig(grid=[2, 2], input_dim=4, d_m=8, depth=1, heads=2, d=4, mlp_dim=16, classes=3)

    def tearDown(self):
        shutil.rmtree(self.tmp_dir)

    def trained_model(self):
        model = build_model(self.cfg, RngStream(1))
        optimizer = Adam(model.parameters(), lr=1e-2)
        for step in range(3):
            model.zero_grad()
            loss_and_backward(model, RngStream(2, key=(step,)).normal((2, 4, 4)), np.array([0, 2]))
            optimizer.step(model.gradients())
        return model, optimizer

    def test_save_and_load(self):
        model, optimizer = self.trained_model()
        history = [{"epoch": 1, "train_loss": 0.5, "train_acc": 0.25, "eval_acc": 0.0, "wall_ms": 1.5}]
        save_checkpoint(self.path, model, {"model": self.cfg.to_dict()}, optimizer=optimizer, epoch=1,
                        history=history)

        checkpoint = load_checkpoint(self.path)
        self.assertEqual(checkpoint.epoch, 1)
        self.assertEqual(checkpoint.history, history)
        self.assertEqual(ModelConfig.from_dict(checkpoint.configs["model"]), self.cfg)
        self.assertEqual(checkpoint.optimizer["t"], 3)

        for name, value in model.named_parameters():
            self.assertTrue(np.array_equal(checkpoint.params[name], value))
            self.assertTrue(np.array_equal(checkpoint.optimizer["m"][name], optimizer.m[name]))
            self.assertTrue(np.array_equal(checkpoint.optimizer["v"][name], optimizer.v[name]))

        fresh = build_model(self.cfg, RngStream(7))
        checkpoint.load_into(fresh)
        images = RngStream(3).normal((2, 4, 4))
        self.assertTrue(np.array_equal(fresh.forward(images), model.forward(images)))

    def test_layout(self):
        model = build_model(self.cfg, RngStream(1))
        save_checkpoint(self.path, model, {})

        with open(self.path, "rb") as infile:
            content = infile.read()
        self.assertEqual(content[:8], MAGIC)

        header_length = int.from_bytes(content[8:8 + HEADER_LENGTH_BYTES], "little")
        header = json.loads(content[16:16 + header_length].decode("utf-8"))
        self.assertEqual(header["format_version"], 1)
        self.assertIsNone(header["optimizer"])
        self.assertEqual(len(content) - 16 - header_length, 8 * model.num_parameters())

        first = header["parameters"][0]
        block = content[16 + header_length:]
        value = np.frombuffer(block[first["offset"]:first["offset"] + 8], dtype="<f8")[0]
        self.assertEqual(value, dict(model.named_parameters())[first["name"]].flat[0])

    def test_bad_files(self):
        with self.assertRaises(CheckpointError):
            load_checkpoint(os.path.join(self.tmp_dir, "missing.ckpt"))

        with open(self.path, "wb") as outfile:
            outfile.write(b"NOTACKPT" + bytes(16))
        with self.assertRaises(CheckpointError):
            load_checkpoint(self.path)

        header = json.dumps({"format_version": 2}).encode("utf-8")
        with open(self.path, "wb") as outfile:
            outfile.write(MAGIC + len(header).to_bytes(8, "little") + header)
        with self.assertRaises(CheckpointError):
            load_checkpoint(self.path)

        with open(self.path, "wb") as outfile:
            outfile.write(MAGIC + (5).to_bytes(8, "little") + b"{brok")
        with self.assertRaises(CheckpointError):
            load_checkpoint(self.path)

    def test_truncated_block(self):
        save_checkpoint(self.path, build_model(self.cfg, RngStream(1)), {})
        with open(self.path, "rb") as infile:
            content = infile.read()
        with open(self.path, "wb") as outfile:
            outfile.write(content[:-8])

        with self.assertRaises(CheckpointError):
            load_checkpoint(self.path)

    def test_load_into_other_architecture(self):
        save_checkpoint(self.path, build_model(self.cfg, RngStream(1)), {})
        checkpoint = load_checkpoint(self.path)

        with self.assertRaises(CheckpointError):
            checkpoint.load_into(build_model(self.cfg.replace(depth=2), RngStream(1)))
        with self.assertRaises(CheckpointError):
            checkpoint.load_into(build_model(self.cfg.replace(mlp_dim=12), RngStream(1)))


if __name__ == "__main__":
    unittest.main()
