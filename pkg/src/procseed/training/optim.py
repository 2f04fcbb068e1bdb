"""AdamW with decoupled weight decay and warmup/cosine schedules."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch


class DivergenceError(RuntimeError):
    def __init__(self, msg, last_good=None):
        super().__init__(msg)
        self.last_good = last_good


@dataclass
class AdamWState:
    m: dict[str, torch.Tensor] = field(default_factory=dict)
    v: dict[str, torch.Tensor] = field(default_factory=dict)
    t: int = 0


def lr_at(t: int, peak: float, max_steps: int, warmup: int = 0, schedule: str = "constant") -> float:
    """Linear warmup to ``peak`` at ``t == warmup``, then constant or cosine to 0 at ``max_steps``."""
    if t < 0:
        raise ValueError("step must be >= 0")
    if warmup and t < warmup:
        return peak * t / warmup
    if schedule == "constant":
        return peak
    if schedule != "cosine":
        raise ValueError(f"unknown schedule {schedule!r}")
    span = max(max_steps - warmup, 1)
    frac = min((t - warmup) / span, 1.0)
    return peak * 0.5 * (1.0 + math.cos(math.pi * frac))


@torch.no_grad()
def adamw_step(params: dict[str, torch.Tensor], grads: dict[str, torch.Tensor], state: AdamWState,
               lr: float, weight_decay: float = 0.0, betas=(0.9, 0.999), eps: float = 1e-8):
    """One in-place AdamW update; returns ``(params, state)``."""
    b1, b2 = betas
    for k, g in grads.items():
        if not torch.isfinite(g).all():
            raise DivergenceError(f"non-finite gradient in {k} at step {state.t + 1}")
    state.t += 1
    t = state.t
    c1, c2 = 1 - b1 ** t, 1 - b2 ** t
    for k, p in params.items():
        g = grads[k]
        if k not in state.m:
            state.m[k] = torch.zeros_like(p)
            state.v[k] = torch.zeros_like(p)
        m, v = state.m[k], state.v[k]
        m.mul_(b1).add_(g, alpha=1 - b1)
        v.mul_(b2).addcmul_(g, g, value=1 - b2)
        if weight_decay:
            p.mul_(1 - lr * weight_decay)
        p.addcdiv_(m / c1, (v / c2).sqrt_().add_(eps), value=-lr)
    return params, state


@torch.no_grad()
def clip_grad_norm(grads: dict[str, torch.Tensor], max_norm: float) -> float:
    total = torch.sqrt(sum((g.double() ** 2).sum() for g in grads.values()))
    if total > max_norm:
        scale = max_norm / (float(total) + 1e-6)
        for g in grads.values():
            g.mul_(scale)
    return float(total)
