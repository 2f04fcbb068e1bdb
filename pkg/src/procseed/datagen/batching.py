"""Pad samples into rectangular batches."""
from __future__ import annotations

import numpy as np


def pad_batch(samples, pad_id: int | None, length: int | None = None):
    """Right-pad to the batch max length; pad positions are never in the loss.

    Returns ``(tokens, loss_mask)`` as ``int64`` and ``bool`` arrays.
    """
    samples = list(samples)
    if not samples:
        raise ValueError("empty batch")
    L = length or max(len(s.tokens) for s in samples)
    fill = 0 if pad_id is None else pad_id
    tokens = np.full((len(samples), L), fill, dtype=np.int64)
    mask = np.zeros((len(samples), L), dtype=bool)
    for i, s in enumerate(samples):
        n = len(s.tokens)
        if n > L:
            raise ValueError(f"sample of length {n} exceeds batch length {L}")
        if n < L and pad_id is None:
            raise ValueError("ragged batch needs a pad id")
        tokens[i, :n] = s.tokens
        mask[i, :n] = s.loss_mask
    return tokens, mask
