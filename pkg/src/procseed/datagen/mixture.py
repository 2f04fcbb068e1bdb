"""Two-source procedural mixtures with a per-sample source-prefix token."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .generators import GenConfig, ProcSample, generate
from .vocab import VocabSpec


@dataclass
class MixtureStream:
    samples: list[ProcSample]
    vocab: VocabSpec
    requested: tuple[int, int]
    realized: tuple[int, int]

    def __iter__(self):
        return iter(self.samples)

    def __len__(self):
        return len(self.samples)


def mixture_vocab(a: VocabSpec, b: VocabSpec) -> VocabSpec:
    big, small = (a, b) if a.size >= b.size else (b, a)
    if (small.sep, small.pad, small.n_elements) != (big.sep, big.pad, big.n_elements):
        raise ValueError("mixture sources must share element, separator and pad ids")
    return big.with_prefixes(2)


def _prefixed(s: ProcSample, prefix: int) -> ProcSample:
    return ProcSample(np.concatenate([[prefix], s.tokens]),
                      np.concatenate([[False], s.loss_mask]),
                      s.source_tag, dict(s.meta))


def mixture_stream(a: GenConfig, b: GenConfig, tokens_a: int, tokens_b: int, rng) -> MixtureStream:
    """Samples from ``a`` and ``b`` filling each token budget, in random order.

    Budgets are filled with whole samples and rounded down: a source stops at
    the first sample that would overflow its budget. Token counts include the
    prefix token.
    """
    vocab = mixture_vocab(a.vocab, b.vocab)
    out: list[ProcSample] = []
    realized = []
    for cfg, budget, prefix in ((a, tokens_a, vocab["prefix_0"]), (b, tokens_b, vocab["prefix_1"])):
        used = 0
        while True:
            s = _prefixed(generate(cfg, rng), prefix)
            if used + len(s) > budget:
                break
            out.append(s)
            used += len(s)
        realized.append(used)
    order = rng.permutation(len(out))
    return MixtureStream([out[i] for i in order], vocab, (tokens_a, tokens_b), tuple(realized))
