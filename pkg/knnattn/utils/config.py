#!/usr/bin/env python

import copy
import json
import numbers
import os

from knnattn.utils.exceptions import ConfigError

SCHEMA_VERSION = 1
OUT_DIR_ENV = "KNN_ATTN_OUT"


class ConfigBase(object):
    """
    Plain settings object. Subclasses list their fields with defaults in FIELDS and check value ranges in validate().
    Unknown keys are rejected, a silent typo would otherwise change an experiment without notice.
    """
    FIELDS = ()

    def __init__(self, **kwargs):
        for name, default in self.FIELDS:
            value = kwargs.pop(name) if name in kwargs else copy.deepcopy(default)
            self._check_type(name, value, default)
            setattr(self, name, value)

        if kwargs:
            raise ConfigError("{cls}: unknown key(s) {keys}".format(cls=type(self).__name__,
                                                                    keys=", ".join(sorted(kwargs))))
        try:
            self.validate()
        except (TypeError, ValueError, IndexError) as e:
            raise ConfigError("{cls}: invalid value ({error})".format(cls=type(self).__name__, error=e))

    def _check_type(self, name, value, default):
        """
        The default fixes the type of a field; fields defaulting to None take any value and are left to validate().
        """
        if default is None:
            return

        if isinstance(default, bool):
            valid = isinstance(value, bool)
        elif isinstance(default, numbers.Integral):
            valid = isinstance(value, numbers.Integral) and not isinstance(value, bool)
        elif isinstance(default, numbers.Real):
            valid = isinstance(value, numbers.Real) and not isinstance(value, bool)
        elif isinstance(default, list):
            valid = isinstance(value, (list, tuple))
        else:
            valid = isinstance(value, type(default))

        if not valid:
            raise ConfigError("{cls}: {name} must be of type {expected}, got {value!r}".format(
                cls=type(self).__name__, name=name, expected=type(default).__name__, value=value))

    def __str__(self):
        output = "{cls}: ".format(cls=type(self).__name__)
        output += "; ".join("{name}: {value}".format(name=name, value=getattr(self, name)) for name, _ in self.FIELDS)
        return output

    def __eq__(self, other):
        if type(self) is not type(other):
            return False
        return self.to_dict() == other.to_dict()

    def __ne__(self, other):
        return not self.__eq__(other)

    def validate(self):
        pass

    def require(self, condition, message):
        if not condition:
            raise ConfigError("{cls}: {message}".format(cls=type(self).__name__, message=message))

    def to_dict(self):
        return {name: copy.deepcopy(getattr(self, name)) for name, _ in self.FIELDS}

    def replace(self, **changes):
        values = self.to_dict()
        values.update(changes)
        return type(self)(**values)

    @classmethod
    def from_dict(cls, data):
        if data is None:
            return cls()
        if not isinstance(data, dict):
            raise ConfigError("{cls}: expected a JSON object, got {type}".format(cls=cls.__name__,
                                                                                 type=type(data).__name__))
        return cls(**data)


def load_config(path):
    """
    Reads a versioned JSON config. A RunManifest is accepted as well, its config snapshot is returned.
    :param path: path to the JSON file
    :return: dict without the schema_version key
    """
    if not os.path.isfile(path):
        raise ConfigError("config file {path} does not exist".format(path=path))

    with open(path, "r") as infile:
        try:
            document = json.load(infile)
        except ValueError as e:
            raise ConfigError("config file {path} is not valid JSON: {error}".format(path=path, error=e))

    if isinstance(document, dict) and "manifest_version" in document:
        document = document.get("config")

    return check_schema(document, source=path)


def check_schema(document, source="config"):
    if not isinstance(document, dict):
        raise ConfigError("{source}: top level must be a JSON object".format(source=source))

    document = dict(document)
    version = document.pop("schema_version", None)
    if version != SCHEMA_VERSION:
        raise ConfigError("{source}: schema_version must be {expected}, got {version}".format(
            source=source, expected=SCHEMA_VERSION, version=version))
    return document


def split_sections(document, allowed, source="config"):
    unknown = set(document) - set(allowed)
    if unknown:
        raise ConfigError("{source}: unknown section(s) {keys}".format(source=source, keys=", ".join(sorted(unknown))))
    return {section: document.get(section) for section in allowed}


def versioned(sections):
    document = {"schema_version": SCHEMA_VERSION}
    document.update(sections)
    return document


def default_out_dir():
    return os.environ.get(OUT_DIR_ENV, os.path.join(os.getcwd(), "out"))
