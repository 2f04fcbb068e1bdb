"""Character-level ingestion of a small user corpus into fixed-length blocks."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .datagen.generators import ProcSample
from .datagen.vocab import VocabSpec


class UnknownSymbolError(ValueError):
    pass


def char_vocab(text: str) -> dict[str, int]:
    """Map each distinct character of ``text`` to an id, in sorted order."""
    return {c: i for i, c in enumerate(sorted(set(text)))}


def load_vocab_map(path) -> dict[str, int]:
    vm = json.loads(Path(path).read_text(encoding="utf-8"))
    if len(set(vm.values())) != len(vm):
        raise ValueError("vocab map assigns one id to several symbols")
    return {str(k): int(v) for k, v in vm.items()}


def vocab_spec(vocab_map: dict[str, int]) -> VocabSpec:
    n = max(vocab_map.values()) + 1 if vocab_map else 0
    return VocabSpec(n, n)


def encode(text: str, vocab_map: dict[str, int], on_unknown: str = "error") -> np.ndarray:
    if on_unknown not in ("error", "skip"):
        raise ValueError("on_unknown must be 'error' or 'skip'")
    ids = []
    for pos, ch in enumerate(text):
        i = vocab_map.get(ch)
        if i is None:
            if on_unknown == "error":
                raise UnknownSymbolError(f"unmappable character {ch!r} at offset {pos}")
            continue
        ids.append(i)
    return np.asarray(ids, dtype=np.int64)


def ingest_tokens(path, vocab_map: dict[str, int], block_size: int = 64,
                  on_unknown: str = "error") -> list[ProcSample]:
    """Split a text file into ``block_size`` blocks with all-true loss masks.

    A trailing partial block is dropped, so the total token count is the
    file's mapped length rounded down to a multiple of ``block_size``.
    """
    if block_size < 2:
        raise ValueError("block_size must be >= 2")
    ids = encode(Path(path).read_text(encoding="utf-8"), vocab_map, on_unknown)
    n_blocks = len(ids) // block_size
    return [ProcSample(ids[i * block_size:(i + 1) * block_size].copy(),
                       np.ones(block_size, dtype=bool), "corpus", {"block": i})
            for i in range(n_blocks)]


def detokenize(tokens, vocab_map: dict[str, int]) -> str:
    inverse = {v: k for k, v in vocab_map.items()}
    return "".join(inverse[int(t)] for t in np.asarray(tokens).ravel())
