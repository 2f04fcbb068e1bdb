"""Attention entropy per head."""
from __future__ import annotations

import numpy as np
import torch


class NotStochasticError(ValueError):
    pass


def head_entropies(maps, valid=None, check: bool = True, tol: float = 1e-5) -> torch.Tensor:
    """Mean natural-log entropy per ``(layer, head)``; differentiable.

    ``maps`` is a per-layer sequence of ``[batch, head, q, k]`` attention
    probabilities. ``valid`` is an optional ``[batch, q]`` bool array of
    non-pad query rows. The first query row is always excluded (causality
    forces it to be one-hot). Rows are averaged within each example, then
    over examples.
    """
    out = []
    for att in maps:
        att = torch.as_tensor(att)
        B, H, T, _ = att.shape
        if check:
            err = (att.detach().sum(-1) - 1).abs().max()
            if err > tol or (att.detach() < 0).any():
                raise NotStochasticError(f"attention rows deviate from stochastic by {float(err):.3g}")
        # clamp keeps the gradient finite at exact zeros (causally masked keys)
        rows = -(att * torch.log(att.clamp_min(torch.finfo(att.dtype).tiny))).sum(-1)  # [B, H, T]
        v = torch.ones(B, T, dtype=torch.bool) if valid is None else torch.as_tensor(valid, dtype=torch.bool)[:, :T].clone()
        v[:, 0] = False
        w = v.to(rows.dtype)
        n = w.sum(-1)
        keep = n > 0
        if not keep.any():
            raise ValueError("no valid attention rows")
        per_example = (rows * w[:, None, :]).sum(-1)[keep] / n[keep][:, None]
        out.append(per_example.mean(0))
    return torch.stack(out)


def attention_entropy(maps, valid=None) -> np.ndarray:
    """``[n_layers, n_heads]`` array of mean attention entropies (nats)."""
    with torch.no_grad():
        return head_entropies(maps, valid).double().numpy()
