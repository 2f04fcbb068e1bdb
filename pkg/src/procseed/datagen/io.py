"""Binary dataset files.

Layout (little endian)::

    b"PDS1" | u16 version | u32 header_len | header JSON (utf-8)
    repeated: u32 n | n x u32 token ids | ceil(n/8) bytes packed loss mask

The header carries the generator config (or task config) and vocabulary.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .generators import ProcSample

MAGIC = b"PDS1"
VERSION = 1


class DatasetFormatError(ValueError):
    pass


def write_dataset(path, samples: Iterable[ProcSample], header: dict) -> int:
    """Write samples; returns the total number of tokens written."""
    blob = json.dumps(header, sort_keys=True).encode()
    total = 0
    with open(path, "wb") as f:
        f.write(MAGIC + struct.pack("<HI", VERSION, len(blob)) + blob)
        for s in samples:
            n = len(s.tokens)
            f.write(struct.pack("<I", n))
            f.write(s.tokens.astype("<u4").tobytes())
            f.write(np.packbits(s.loss_mask).tobytes())
            total += n
    return total


def read_header(f) -> dict:
    if f.read(4) != MAGIC:
        raise DatasetFormatError("not a procseed dataset file")
    version, hlen = struct.unpack("<HI", f.read(6))
    if version != VERSION:
        raise DatasetFormatError(f"unsupported dataset version {version}")
    return json.loads(f.read(hlen))


def read_dataset(path) -> tuple[dict, Iterator[ProcSample]]:
    path = Path(path)
    with open(path, "rb") as f:
        header = read_header(f)
    tag = header.get("kind", "")

    def records():
        with open(path, "rb") as f:
            read_header(f)
            while raw := f.read(4):
                (n,) = struct.unpack("<I", raw)
                tokens = np.frombuffer(f.read(4 * n), dtype="<u4").astype(np.int64)
                mask = np.unpackbits(np.frombuffer(f.read((n + 7) // 8), dtype=np.uint8))[:n]
                if len(tokens) != n:
                    raise DatasetFormatError("truncated record")
                yield ProcSample(tokens, mask.astype(bool), tag)

    return header, records()
