"""Input validation for token batches and loss masks."""
from __future__ import annotations

import numpy as np


def check_tokens(X, vocab_size: int | None = None, min_length: int = 2) -> np.ndarray:
    """Return ``X`` as a 2-D int64 array, checking ids against ``vocab_size``."""
    arr = np.asarray(X)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2:
        raise ValueError(f"expected a 2-D token array, got shape {arr.shape}")
    if arr.shape[0] == 0:
        raise ValueError("empty token batch")
    if arr.shape[1] < min_length:
        raise ValueError(f"sequences must have at least {min_length} tokens")
    if arr.dtype.kind == "f":
        if not np.all(np.isfinite(arr)) or np.any(arr != np.round(arr)):
            raise ValueError("token ids must be integers")
    elif arr.dtype.kind not in "iu":
        raise ValueError(f"token ids must be integers, got dtype {arr.dtype}")
    arr = arr.astype(np.int64)
    if arr.min() < 0:
        raise ValueError("token ids must be non-negative")
    if vocab_size is not None and arr.max() >= vocab_size:
        raise ValueError(f"token id {int(arr.max())} outside vocabulary of size {vocab_size}")
    return arr


def check_mask(mask, tokens: np.ndarray) -> np.ndarray:
    """Return a boolean mask shaped like ``tokens``; ``None`` means all positions."""
    if mask is None:
        return np.ones(tokens.shape, dtype=bool)
    m = np.asarray(mask)
    if m.ndim == 1:
        m = m[None, :]
    if m.shape != tokens.shape:
        raise ValueError(f"mask shape {m.shape} does not match tokens {tokens.shape}")
    if m.dtype != bool:
        if not np.isin(m, (0, 1)).all():
            raise ValueError("mask entries must be 0/1 or boolean")
        m = m.astype(bool)
    return m


def check_binary_states(X) -> np.ndarray:
    """Return ``X`` as float32 rows of 0/1 cells, shape [batch, steps, width]."""
    arr = np.asarray(X)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3:
        raise ValueError(f"expected [batch, steps, width] states, got shape {arr.shape}")
    if not np.isin(arr, (0, 1)).all():
        raise ValueError("cell states must be 0 or 1")
    return arr.astype(np.float32)
