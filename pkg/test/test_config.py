#!/usr/bin/env python

import json
import os
import shutil
import tempfile
import unittest

from knnattn.utils.config import ConfigBase
from knnattn.utils.config import OUT_DIR_ENV
from knnattn.utils.config import default_out_dir
from knnattn.utils.config import load_config
from knnattn.utils.config import split_sections
from knnattn.utils.config import versioned
from knnattn.utils.exceptions import ConfigError


class ExampleConfig(ConfigBase):
    FIELDS = (
        ("size", 4),
        ("names", ["a", "b"]),
    )

    def validate(self):
        self.require(self.size > 0, "size must be positive")


class ConfigTest(unittest.TestCase):
    def setUp(self):
        self.tmp_dir = tempfile.mkdtemp()

    def tearDown(self):
        shutil.rmtree(self.tmp_dir)

    def write(self, name, document):
        path = os.path.join(self.tmp_dir, name)
        with open(path, "w") as outfile:
            if isinstance(document, str):
                outfile.write(document)
            else:
                json.dump(document, outfile)
        return path

    def test_defaults_and_overrides(self):
        cfg = ExampleConfig()
        self.assertEqual(cfg.size, 4)
        self.assertEqual(ExampleConfig(size=7).size, 7)
        self.assertEqual(ExampleConfig.from_dict(None), cfg)
        self.assertEqual(ExampleConfig.from_dict({"size": 4}), cfg)

    def test_defaults_are_not_shared(self):
        first = ExampleConfig()
        first.names.append("c")
        self.assertEqual(ExampleConfig().names, ["a", "b"])

    def test_replace(self):
        cfg = ExampleConfig()
        changed = cfg.replace(size=9)
        self.assertEqual(changed.size, 9)
        self.assertEqual(cfg.size, 4)
        self.assertNotEqual(cfg, changed)

    def test_invalid(self):
        with self.assertRaises(ConfigError):
            ExampleConfig(size=0)
        with self.assertRaises(ConfigError):
            ExampleConfig(sizes=3)
        with self.assertRaises(ConfigError):
            ExampleConfig.from_dict([1, 2])

    def test_load_config(self):
        path = self.write("config.json", versioned({"example": {"size": 2}}))
        self.assertEqual(load_config(path), {"example": {"size": 2}})

    def test_load_config_errors(self):
        with self.assertRaises(ConfigError):
            load_config(os.path.join(self.tmp_dir, "missing.json"))
        with self.assertRaises(ConfigError):
            load_config(self.write("broken.json", "{not json"))
        with self.assertRaises(ConfigError):
            load_config(self.write("unversioned.json", {"example": {}}))
        with self.assertRaises(ConfigError):
            load_config(self.write("future.json", {"schema_version": 2}))
        with self.assertRaises(ConfigError):
            load_config(self.write("list.json", [1, 2]))

    def test_load_manifest(self):
        manifest = {"manifest_version": 1, "subcommand": "lemma", "config": versioned({"lemma1": {"n": 8}})}
        self.assertEqual(load_config(self.write("manifest.json", manifest)), {"lemma1": {"n": 8}})

    def test_split_sections(self):
        sections = split_sections({"model": {"depth": 1}}, ("model", "train"))
        self.assertEqual(sections, {"model": {"depth": 1}, "train": None})

        with self.assertRaises(ConfigError):
            split_sections({"modle": {}}, ("model", "train"))

    def test_default_out_dir(self):
        previous = os.environ.get(OUT_DIR_ENV)
        try:
            os.environ[OUT_DIR_ENV] = self.tmp_dir
            self.assertEqual(default_out_dir(), self.tmp_dir)
            del os.environ[OUT_DIR_ENV]
            self.assertEqual(default_out_dir(), os.path.join(os.getcwd(), "out"))
        finally:
            if previous is not None:
                os.environ[OUT_DIR_ENV] = previous


if __name__ == "__main__":
    unittest.main()
