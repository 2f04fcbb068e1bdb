"""Checkpoint files.

Layout (little endian)::

    b"PSCK" | u16 version | u32 header_len | header JSON
    tensor data: float32, row-major, concatenated in header order

The header lists ``config``, ``provenance`` and one record per tensor with
``name``, ``component``, ``layer`` and ``shape``.
"""
from __future__ import annotations

import json
import struct

import numpy as np

from .params import ModelConfig, ParamSet, component_of, layer_of

MAGIC = b"PSCK"
VERSION = 1


class CheckpointError(ValueError):
    pass


def dumps(p: ParamSet) -> bytes:
    header = {
        "config": p.config.to_dict(),
        "provenance": p.provenance,
        "tensors": [{"name": k, "component": component_of(k), "layer": layer_of(k),
                     "shape": list(v.shape)} for k, v in p.items()],
    }
    blob = json.dumps(header, sort_keys=True).encode()
    body = b"".join(np.ascontiguousarray(v, dtype="<f4").tobytes() for v in p.tensors.values())
    return MAGIC + struct.pack("<HI", VERSION, len(blob)) + blob + body


def loads(data: bytes) -> ParamSet:
    if data[:4] != MAGIC:
        raise CheckpointError("not a procseed checkpoint")
    version, hlen = struct.unpack("<HI", data[4:10])
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    header = json.loads(data[10:10 + hlen])
    offset = 10 + hlen
    tensors = {}
    for rec in header["tensors"]:
        if rec["component"] != component_of(rec["name"]):
            raise CheckpointError(f"component tag mismatch for {rec['name']}")
        n = int(np.prod(rec["shape"], dtype=np.int64))
        arr = np.frombuffer(data, dtype="<f4", count=n, offset=offset)
        tensors[rec["name"]] = arr.reshape(rec["shape"]).astype(np.float32)
        offset += 4 * n
    if offset != len(data):
        raise CheckpointError("trailing or missing tensor bytes")
    return ParamSet(ModelConfig(**header["config"]), tensors, header["provenance"])


def save(p: ParamSet, path) -> None:
    with open(path, "wb") as f:
        f.write(dumps(p))


def load(path) -> ParamSet:
    with open(path, "rb") as f:
        return loads(f.read())
