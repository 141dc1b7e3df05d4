#!/usr/bin/env python

import json
from collections import OrderedDict

import numpy as np

from knnattn.utils.exceptions import CheckpointError

MAGIC = b"KNNATTN1"
FORMAT_VERSION = 1
HEADER_LENGTH_BYTES = 8
BLOCK_DTYPE = np.dtype("<f8")


class Checkpoint(object):
    """
    Contents of a checkpoint file: configs (section name -> dict), parameters (name -> array), Adam state, number of
    completed epochs and the metrics history so far.
    """
    def __init__(self, configs, params, epoch=0, history=None, optimizer=None):
        self.configs = configs
        self.params = params
        self.epoch = epoch
        self.history = history if history is not None else list()
        self.optimizer = optimizer

    def __str__(self):
        return "Checkpoint: epoch {epoch}, {num} parameter arrays".format(epoch=self.epoch, num=len(self.params))

    def load_into(self, model):
        """
        Copies the stored parameters into the model's arrays.
        """
        expected = OrderedDict(model.named_parameters())
        if list(expected) != list(self.params):
            raise CheckpointError("parameter names do not match the model")
        for name, value in expected.items():
            if value.shape != self.params[name].shape:
                raise CheckpointError("parameter {name}: stored shape {stored} vs model shape {shape}".format(
                    name=name, stored=self.params[name].shape, shape=value.shape))
            value[...] = self.params[name]


def _manifest(arrays, offset):
    entries = list()
    for name, value in arrays.items():
        entries.append({"name": name, "shape": list(value.shape), "offset": offset})
        offset += value.size * BLOCK_DTYPE.itemsize
    return entries, offset


def save_checkpoint(path, model, configs, optimizer=None, epoch=0, history=None):
    """
    Layout: MAGIC, 8-byte little-endian header length, UTF-8 JSON header, then one block of little-endian float64
    values in row-major order. Manifest offsets are byte offsets into that block.
    """
    params = OrderedDict(model.named_parameters())
    parameter_manifest, offset = _manifest(params, 0)

    header = {
        "format_version": FORMAT_VERSION,
        "configs": configs,
        "epoch": epoch,
        "history": history if history is not None else list(),
        "parameters": parameter_manifest,
        "optimizer": None,
    }
    arrays = list(params.values())

    if optimizer is not None:
        m_manifest, offset = _manifest(optimizer.m, offset)
        v_manifest, offset = _manifest(optimizer.v, offset)
        header["optimizer"] = {"t": optimizer.t, "m": m_manifest, "v": v_manifest}
        arrays += list(optimizer.m.values()) + list(optimizer.v.values())

    encoded = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as outfile:
        outfile.write(MAGIC)
        outfile.write(len(encoded).to_bytes(HEADER_LENGTH_BYTES, "little"))
        outfile.write(encoded)
        for value in arrays:
            outfile.write(np.ascontiguousarray(value, dtype=BLOCK_DTYPE).tobytes())


def _read_arrays(block, manifest):
    arrays = OrderedDict()
    for entry in manifest:
        shape = tuple(entry["shape"])
        size = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        end = start + size * BLOCK_DTYPE.itemsize
        if start < 0 or end > len(block):
            raise CheckpointError("array {name} lies outside the data block".format(name=entry["name"]))
        arrays[entry["name"]] = np.frombuffer(block[start:end], dtype=BLOCK_DTYPE).astype(np.float64).reshape(shape)
    return arrays


def load_checkpoint(path):
    try:
        with open(path, "rb") as infile:
            content = infile.read()
    except IOError as e:
        raise CheckpointError("cannot read checkpoint {path}: {error}".format(path=path, error=e))

    if content[:len(MAGIC)] != MAGIC:
        raise CheckpointError("{path} is not a checkpoint (bad magic)".format(path=path))

    start = len(MAGIC) + HEADER_LENGTH_BYTES
    header_length = int.from_bytes(content[len(MAGIC):start], "little")
    try:
        header = json.loads(content[start:start + header_length].decode("utf-8"))
    except ValueError as e:
        raise CheckpointError("{path}: corrupt header: {error}".format(path=path, error=e))

    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError("{path}: unsupported format version {version}".format(
            path=path, version=header.get("format_version")))

    block = content[start + header_length:]
    params = _read_arrays(block, header["parameters"])

    optimizer = None
    if header.get("optimizer") is not None:
        optimizer = {
            "t": header["optimizer"]["t"],
            "m": _read_arrays(block, header["optimizer"]["m"]),
            "v": _read_arrays(block, header["optimizer"]["v"]),
        }

    return Checkpoint(header["configs"], params, epoch=header["epoch"], history=header["history"],
                      optimizer=optimizer)
