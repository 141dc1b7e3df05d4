#!/usr/bin/env python

import datetime
import json
import os

from knnattn import __version__
from knnattn.utils.config import ConfigBase

MANIFEST_VERSION = 1
MANIFEST_FILE = "manifest.json"
SPLITS = ("train", "eval")


def _timestamp():
    return '{:%Y-%m-%dT%H:%M:%S.%f}'.format(datetime.datetime.now())


class RunManifest(object):
    """
    Written to the out directory before a subcommand starts and rewritten with the end time when it is done. The
    config snapshot holds the fully resolved config, so load_config(manifest) reproduces the run.
    """
    def __init__(self, subcommand, config_path, config, seed, out_dir):
        self.subcommand = subcommand
        self.config_path = config_path
        self.config = config
        self.seed = seed
        self.out_dir = out_dir
        self.version = __version__
        self.start = None
        self.end = None

    def __str__(self):
        return "RunManifest: {cmd} (config {path}, seed {seed}) -> {out}".format(
            cmd=self.subcommand, path=self.config_path, seed=self.seed, out=self.out_dir)

    @property
    def path(self):
        return os.path.join(self.out_dir, MANIFEST_FILE)

    def to_dict(self):
        return {
            "manifest_version": MANIFEST_VERSION,
            "subcommand": self.subcommand,
            "config_path": self.config_path,
            "config": self.config,
            "seed": self.seed,
            "out_dir": self.out_dir,
            "version": self.version,
            "start": self.start,
            "end": self.end,
        }

    def write(self):
        if not os.path.isdir(self.out_dir):
            os.makedirs(self.out_dir)
        with open(self.path, "w") as outfile:
            json.dump(self.to_dict(), outfile, indent=2, sort_keys=True)
        return self.path

    def begin(self):
        self.start = _timestamp()
        return self.write()

    def finish(self):
        self.end = _timestamp()
        return self.write()


class RunConfig(ConfigBase):
    """
    Command line choices that are not part of any config section: paired arms, number of seeds and the checkpoint
    to resume from for train, the checkpoint and split for eval and diagnose. Stored as the "run" section of the
    snapshot, explicit flags override it.
    """
    FIELDS = (
        ("compare", None),
        ("seeds", 1),
        ("resume", None),
        ("checkpoint", None),
        ("split", "eval"),
    )

    def validate(self):
        self.require(self.seeds >= 1, "seeds must be positive")
        self.require(self.split in SPLITS, "split must be one of {splits}".format(splits=", ".join(SPLITS)))
        for name in ("compare", "resume", "checkpoint"):
            value = getattr(self, name)
            self.require(value is None or isinstance(value, str), "{name} must be a string".format(name=name))

    def with_flags(self, **flags):
        return self.replace(**{name: value for name, value in flags.items() if value is not None})
