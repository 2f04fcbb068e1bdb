"""Training loop: AdamW, periodic validation, best-checkpoint selection, curriculum."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, asdict, field

import numpy as np
import torch

from ..evaluation import evaluate
from ..model.entropy import head_entropies
from ..model.params import ParamSet
from ..model.transformer import binary_loss, from_torch, lm_loss, to_torch
from .config import CurriculumSchedule, RegularizerConfig, TrainConfig
from .optim import AdamWState, DivergenceError, adamw_step, clip_grad_norm, lr_at


@dataclass
class MetricsRecord:
    step: int
    tokens_seen: int
    phase: str
    loss: float
    token_accuracy: float
    perplexity: float
    lr: float
    train_loss: float | None = None
    length: int | None = None
    per_head_entropy: list[list[float]] | None = None

    def to_json(self) -> str:
        d = {k: v for k, v in asdict(self).items() if v is not None}
        return json.dumps(d, sort_keys=True)


@dataclass
class TrainResult:
    params: ParamSet
    last: ParamSet
    metrics: list[MetricsRecord] = field(default_factory=list)
    tokens_seen: int = 0
    steps: int = 0
    best_step: int = 0
    best_loss: float = math.inf
    stopped: str = "budget"
    length: int | None = None

    def write_metrics(self, path) -> None:
        with open(path, "w") as f:
            for m in self.metrics:
                f.write(m.to_json() + "\n")


def entropy_regularized_loss(base, maps, reg: RegularizerConfig | None, valid=None):
    """``base + weight * sum over selected heads of (H_head - target)^2``."""
    if reg is None or not reg.heads or reg.weight == 0:
        return base
    H = head_entropies(maps, valid, check=False)
    for l, h in reg.heads:
        if not (0 <= l < H.shape[0] and 0 <= h < H.shape[1]):
            raise IndexError(f"head ({l}, {h}) does not exist")
    penalty = sum((H[l, h] - reg.target) ** 2 for l, h in reg.heads)
    return base + reg.weight * penalty


def _objective(W, p_cfg, tokens, mask, reg, pad):
    want = reg is not None and bool(reg.heads) and reg.weight != 0
    if p_cfg.io_variant == "binary":
        loss, _, _, maps = binary_loss(W, p_cfg, tokens, want)
        valid = None
    else:
        loss, _, _, maps = lm_loss(W, p_cfg, tokens, mask, want)
        valid = None if pad is None else torch.as_tensor(tokens[:, :-1] != pad)
    return entropy_regularized_loss(loss, maps, reg, valid) if want else loss, loss


def _snapshot(W, cfg, provenance):
    return from_torch(W, cfg, provenance)


def train(params: ParamSet, source, cfg: TrainConfig, curriculum: CurriculumSchedule | None = None,
          regularizer: RegularizerConfig | None = None, val_source=None, phase: str = "train",
          log=None, on_eval=None) -> TrainResult:
    """Train ``params`` on batches from ``source``.

    Validation runs every ``cfg.interval`` steps and at the last step; the
    returned ``params`` is the checkpoint with the lowest validation loss at
    the final curriculum length. ``log`` may be an open text file receiving
    one JSON metrics line per validation.
    """
    torch.manual_seed(cfg.seed)
    mcfg = params.config
    provenance = {**params.provenance, "phase": phase}
    result = TrainResult(params.copy(), params.copy(), stopped="budget")
    if cfg.max_steps == 0:
        result.stopped = "no steps"
        return result
    val = val_source if val_source is not None else source.validation()
    if curriculum is not None:
        source.length = curriculum.start
        val.length = curriculum.start
        result.length = curriculum.start
    W = to_torch(params, requires_grad=True)
    names = list(W)
    state = AdamWState()
    pad = None if source.binary else source.vocab.pad
    interval = cfg.interval
    best = (math.inf, params.copy(), 0)
    tokens_seen = 0
    for step in range(1, cfg.max_steps + 1):
        tokens, mask, n_tok = source.batch(cfg.batch_size)
        loss, base = _objective(W, mcfg, tokens, mask, regularizer, pad)
        if not torch.isfinite(loss):
            raise DivergenceError(f"non-finite loss at step {step}", last_good=best[1])
        grads = dict(zip(names, torch.autograd.grad(loss, [W[k] for k in names])))
        if cfg.grad_clip:
            clip_grad_norm(grads, cfg.grad_clip)
        lr = lr_at(step, cfg.lr, cfg.max_steps, cfg.warmup_steps, cfg.schedule)
        try:
            adamw_step(W, grads, state, lr, cfg.weight_decay, cfg.betas, cfg.eps)
        except DivergenceError as e:
            e.last_good = best[1]
            raise
        tokens_seen += n_tok
        budget_hit = cfg.max_tokens is not None and tokens_seen >= cfg.max_tokens
        if step % interval and step != cfg.max_steps and not budget_hit:
            continue
        snap = _snapshot(W, mcfg, {**provenance, "step": step, "tokens_seen": tokens_seen})
        rep = evaluate(snap, val, cfg.val_size, batch_size=min(cfg.val_size, 1000))
        rec = MetricsRecord(step, tokens_seen, phase, rep.loss, rep.token_accuracy, rep.perplexity,
                            lr, float(base.detach()), result.length)
        result.metrics.append(rec)
        if log is not None:
            log.write(rec.to_json() + "\n")
        if on_eval is not None:
            on_eval(rec)
        if rep.loss < best[0]:
            best = (rep.loss, snap, step)
        if curriculum is not None:
            new = curriculum.next_length(source.length, rep.token_accuracy)
            if new != source.length:
                source.length = new
                val.length = new
                result.length = new
                best = (math.inf, snap, step)
                continue
        at_max = curriculum is None or source.length >= curriculum.max_length
        if cfg.target_accuracy is not None and at_max and rep.token_accuracy >= cfg.target_accuracy:
            result.stopped = "target accuracy"
            break
        if budget_hit:
            result.stopped = "token budget"
            break
    result.last = _snapshot(W, mcfg, {**provenance, "step": step, "tokens_seen": tokens_seen})
    result.params = best[1]
    result.best_loss, result.best_step = best[0], best[2]
    result.tokens_seen, result.steps = tokens_seen, step
    return result
