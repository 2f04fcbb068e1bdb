"""Token accuracy, perplexity and attention-entropy reports."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict

import numpy as np
import torch

from .model.params import ParamSet
from .model.transformer import binary_loss, lm_loss, to_torch
from .model.entropy import head_entropies


class EmptyStreamError(ValueError):
    pass


@dataclass
class EvalReport:
    token_accuracy: float
    perplexity: float
    loss: float
    n_samples: int
    n_positions: int
    sequence_accuracy: float | None = None
    per_head_entropy: list[list[float]] | None = None
    seed: int | None = None
    notes: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def _batch_stats(W, p: ParamSet, tokens, mask, want_attn=False):
    """Sum of NLL, correct count, position count and per-sample all-correct flags."""
    cfg = p.config
    if cfg.io_variant == "binary":
        loss, n, scores, maps = binary_loss(W, cfg, tokens, want_attn)
        target = torch.as_tensor(tokens)[:, 1:]
        correct = (scores > 0).to(target.dtype) == target
        seq_ok = correct.flatten(1).all(1)
        valid = None
        return float(loss) * n, int(correct.sum()), n, seq_ok, maps, valid
    tokens = torch.as_tensor(tokens, dtype=torch.long)
    m = torch.as_tensor(mask, dtype=torch.bool)[:, 1:]
    if not m.any() and not want_attn:
        return 0.0, 0, 0, torch.zeros(len(tokens), dtype=torch.bool), None, None
    loss, n, logits, maps = lm_loss(W, cfg, tokens, mask, want_attn)
    hit = (logits.argmax(-1) == tokens[:, 1:]) & m
    seq_ok = (hit | ~m).all(1) & m.any(1)
    return float(loss) * n, int(hit.sum()), n, seq_ok, maps, None


def evaluate(p: ParamSet, source, n_samples: int = 1000, batch_size: int = 1000,
             with_entropy: bool = False) -> EvalReport:
    """Greedy-argmax accuracy and perplexity over loss-masked positions.

    Sums are accumulated exactly (``math.fsum``) so the report does not
    depend on how the stream is chunked.
    """
    if n_samples <= 0:
        raise EmptyStreamError("n_samples must be positive")
    W = to_torch(p)
    nll, correct, positions, seq_correct, done = [], 0, 0, 0, 0
    ent = []
    with torch.no_grad():
        while done < n_samples:
            n = min(batch_size, n_samples - done)
            tokens, mask, _ = source.batch(n)
            s, c, k, seq_ok, maps, _ = _batch_stats(W, p, tokens, mask, with_entropy)
            nll.append(s)
            correct += c
            positions += k
            seq_correct += int(seq_ok.sum())
            if with_entropy:
                valid = None if mask is None else _valid_rows(tokens, source)
                ent.append((n, head_entropies(maps, valid).numpy()))
            done += n
    if positions == 0:
        raise EmptyStreamError("stream produced no loss-bearing positions")
    mean_nll = math.fsum(nll) / positions
    table = None
    if ent:
        table = (sum(n * e for n, e in ent) / done).tolist()
    return EvalReport(correct / positions, math.exp(mean_nll), mean_nll, done, positions,
                      seq_correct / done, table, getattr(source, "seed", None),
                      {"entropy_excludes_first_query": True} if ent else {})


def _valid_rows(tokens, source):
    pad = getattr(source.vocab, "pad", None)
    inp = np.asarray(tokens)[:, :-1]
    return np.ones_like(inp, dtype=bool) if pad is None else inp != pad


def entropy_table(p: ParamSet, source, n_examples: int = 100) -> np.ndarray:
    """``[n_layers, n_heads]`` mean attention entropy over ``n_examples`` samples."""
    W = to_torch(p)
    tokens, mask, _ = source.batch(n_examples)
    with torch.no_grad():
        if p.config.io_variant == "binary":
            maps = binary_loss(W, p.config, tokens, True)[3]
            valid = None
        else:
            maps = lm_loss(W, p.config, tokens, mask, True)[3]
            valid = _valid_rows(tokens, source)
        return head_entropies(maps, valid).double().numpy()


def rank_heads_by_entropy(p: ParamSet, source, n_examples: int = 100):
    """``[(layer, head, entropy), ...]`` sorted by ascending entropy."""
    table = entropy_table(p, source, n_examples)
    cells = [(l, h, float(table[l, h])) for l in range(table.shape[0]) for h in range(table.shape[1])]
    return sorted(cells, key=lambda c: (c[2], c[0], c[1]))


def entropy_csv(table) -> str:
    lines = ["layer,head,entropy"]
    for l, row in enumerate(np.asarray(table)):
        lines += [f"{l},{h},{e:.6f}" for h, e in enumerate(row)]
    return "\n".join(lines) + "\n"
