"""Elementary cellular automata with periodic boundaries."""
from __future__ import annotations

import numpy as np


def rule_table(rule: int) -> np.ndarray:
    """Next value for neighbourhood index ``4*left + 2*center + right``."""
    if not 0 <= rule <= 255:
        raise ValueError(f"rule must be in [0, 255], got {rule}")
    return ((rule >> np.arange(8)) & 1).astype(np.uint8)


def eca_step(state, rule: int = 110) -> np.ndarray:
    state = np.asarray(state, dtype=np.uint8)
    if state.ndim != 1 or state.size == 0:
        raise ValueError("state must be a non-empty 1-d binary vector")
    if state.max() > 1:
        raise ValueError("state must be binary")
    idx = 4 * np.roll(state, 1) + 2 * state + np.roll(state, -1)
    return rule_table(rule)[idx]


def evolve(state, rule: int, steps: int) -> np.ndarray:
    """``steps`` rows starting at ``state``; row ``t+1 = eca_step(row t)``."""
    state = np.asarray(state, dtype=np.uint8)
    rows = np.empty((steps, state.size), dtype=np.uint8)
    for t in range(steps):
        rows[t] = state
        state = eca_step(state, rule)
    return rows
