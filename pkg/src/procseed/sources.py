"""Batch sources feeding training and evaluation.

A source draws padded batches from a seeded stream. ``batch(n)`` returns
``(tokens, loss_mask, n_tokens)`` where ``n_tokens`` counts the unpadded
tokens consumed. Binary (ECA) sources return state rows instead of tokens.
"""
from __future__ import annotations

import dataclasses

import numpy as np

from .datagen.batching import pad_batch
from .datagen.generators import GenConfig, generate, gen_eca_sequence, shuffle_sample
from .tasks import TaskConfig, generate_task

VALIDATION_SEED_OFFSET = 1_000_003


class Source:
    binary = False
    vocab = None

    def __init__(self, seed: int = 0):
        self.seed = seed
        self.rng = np.random.default_rng(seed)

    def draw(self):
        raise NotImplementedError

    def batch(self, n: int):
        samples = [self.draw() for _ in range(n)]
        tokens, mask = pad_batch(samples, self.vocab.pad)
        return tokens, mask, sum(len(s) for s in samples)

    def validation(self) -> "Source":
        """Same distribution, disjoint seed stream."""
        return self.reseeded(self.seed + VALIDATION_SEED_OFFSET)

    def reseeded(self, seed: int) -> "Source":
        raise NotImplementedError

    @property
    def length(self):
        return None

    @length.setter
    def length(self, value):
        raise TypeError(f"{type(self).__name__} has no adjustable length")


class GeneratorSource(Source):
    """Procedural token generator; ``shuffled`` permutes every sample."""

    def __init__(self, cfg: GenConfig, seed: int | None = None, shuffled: bool = False):
        super().__init__(cfg.seed if seed is None else seed)
        self.cfg = cfg
        self.vocab = cfg.vocab
        self.shuffled = shuffled

    def draw(self):
        s = generate(self.cfg, self.rng)
        return shuffle_sample(s, self.rng) if self.shuffled else s

    def reseeded(self, seed):
        src = GeneratorSource(self.cfg, seed, self.shuffled)
        return src

    @property
    def length(self):
        return self.cfg.input_length

    @length.setter
    def length(self, value):
        self.cfg = dataclasses.replace(self.cfg, input_length=int(value))


class TaskSource(Source):
    def __init__(self, cfg: TaskConfig, seed: int | None = None):
        super().__init__(cfg.seed if seed is None else seed)
        self.cfg = cfg
        self.vocab = cfg.vocab

    def draw(self):
        return generate_task(self.cfg, self.rng)

    def reseeded(self, seed):
        return TaskSource(self.cfg, seed)


class ListSource(Source):
    """Finite sample list (datasets, mixtures, ingested corpora), drawn uniformly."""

    def __init__(self, samples, vocab, seed: int = 0):
        super().__init__(seed)
        self.samples = list(samples)
        if not self.samples:
            raise ValueError("empty sample list")
        self.vocab = vocab

    def draw(self):
        return self.samples[self.rng.integers(len(self.samples))]

    def reseeded(self, seed):
        return ListSource(self.samples, self.vocab, seed)


class ArraySource(Source):
    """Fixed token matrix with a loss mask; batches are rows drawn with replacement."""

    def __init__(self, tokens, mask, vocab, seed: int = 0):
        super().__init__(seed)
        self.tokens = np.asarray(tokens, dtype=np.int64)
        self.mask = np.asarray(mask, dtype=bool)
        if self.tokens.shape != self.mask.shape or self.tokens.ndim != 2 or not len(self.tokens):
            raise ValueError("tokens and mask must be equal-shaped non-empty 2-D arrays")
        self.vocab = vocab

    def batch(self, n: int):
        idx = self.rng.integers(len(self.tokens), size=n)
        return self.tokens[idx], self.mask[idx], self.tokens.shape[1] * n

    def reseeded(self, seed):
        return ArraySource(self.tokens, self.mask, self.vocab, seed)


class ECASource(Source):
    """Rule-110 trajectories; each draw starts from a new random state."""

    binary = True

    def __init__(self, cfg: GenConfig, seed: int | None = None, rule: int = 110):
        super().__init__(cfg.seed if seed is None else seed)
        self.cfg = cfg
        self.rule = rule

    def draw(self):
        return gen_eca_sequence(self.cfg, self.rng, self.rule)

    def batch(self, n: int):
        rows = np.stack([self.draw() for _ in range(n)]).astype(np.float32)
        return rows, None, rows.shape[0] * rows.shape[1] * rows.shape[2]

    def reseeded(self, seed):
        return ECASource(self.cfg, seed, self.rule)


def make_source(kind: str, seed: int = 0, **kw) -> Source:
    """Build a source from a generator or task name plus keyword knobs."""
    from .tasks import TASK_KINDS
    if kind in TASK_KINDS:
        return TaskSource(TaskConfig(kind, seed=seed, **kw))
    shuffled = kw.pop("shuffled", False)
    cfg = GenConfig(kind, seed=seed, **kw)
    if kind == "eca110":
        return ECASource(cfg)
    return GeneratorSource(cfg, shuffled=shuffled)
