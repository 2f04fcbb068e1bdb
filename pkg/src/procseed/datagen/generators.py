"""Seeded generators for the procedural data sources.

Every sequence-transform generator is split into a pure ``frame_*`` function
(explicit input -> framed sample) and a ``gen_*`` function that draws the
input from an ``np.random.Generator`` and frames it.
"""
from __future__ import annotations

from dataclasses import dataclass, field, asdict
from typing import Iterator

import numpy as np

from .vocab import VocabSpec, vocab_for
from . import eca

KINDS = ("identity", "set", "union", "delete", "sort", "reverse", "stack",
         "dyck", "dyck_shuffle", "eca110")
TOKEN_KINDS = KINDS[:-1]
LM_KINDS = ("dyck", "dyck_shuffle", "eca110")


class DegenerateInputError(ValueError):
    pass


class GenConfigError(ValueError):
    pass


@dataclass
class ProcSample:
    tokens: np.ndarray
    loss_mask: np.ndarray
    source_tag: str
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.tokens = np.asarray(self.tokens, dtype=np.int64)
        self.loss_mask = np.asarray(self.loss_mask, dtype=bool)
        if self.tokens.shape != self.loss_mask.shape:
            raise ValueError("loss_mask length must equal tokens length")

    def __len__(self):
        return len(self.tokens)

    @property
    def n_tokens(self) -> int:
        return len(self.tokens)

    def output_region(self) -> np.ndarray:
        return self.tokens[self.loss_mask]


@dataclass
class GenConfig:
    kind: str
    input_length: int = 8
    k: int = 4
    p_open: float | None = None
    vocab: VocabSpec | None = None
    seed: int = 0
    eca_width: int = 100
    eca_steps: int = 60
    n_elements: int = 100
    min_length: int | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise GenConfigError(f"unknown generator kind {self.kind!r}")
        if self.p_open is None:
            self.p_open = 0.49 if self.kind == "dyck" else 0.5
        if self.vocab is None:
            self.vocab = vocab_for(self.kind, self.n_elements, self.k)
        if self.kind in ("dyck", "dyck_shuffle"):
            if self.vocab.size != 2 * self.k:
                raise GenConfigError("Dyck vocabulary must have 2k tokens")
            if not 0 < self.p_open < 1:
                raise GenConfigError("p_open must lie in (0, 1)")
            if self.kind == "dyck" and self.input_length % 2:
                raise GenConfigError("Dyck length must be even")
        elif self.kind != "eca110" and self.input_length < 1:
            raise DegenerateInputError("input_length must be >= 1")
        if self.min_length is not None and not 1 <= self.min_length <= self.input_length:
            raise GenConfigError("min_length must lie in [1, input_length]")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["vocab"] = self.vocab.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "GenConfig":
        d = dict(d)
        d["vocab"] = VocabSpec.from_dict(d["vocab"]) if d.get("vocab") else None
        return cls(**d)


# -- framing ----------------------------------------------------------------

def _framed(prompt, output, tag, meta=None) -> ProcSample:
    tokens = np.concatenate([np.asarray(prompt, dtype=np.int64), np.asarray(output, dtype=np.int64)])
    mask = np.zeros(len(tokens), dtype=bool)
    mask[len(prompt):] = True
    return ProcSample(tokens, mask, tag, meta or {})


def _check_input(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.int64)
    if x.size == 0:
        raise DegenerateInputError("empty input sequence")
    return x


def dedup(x) -> list[int]:
    seen: set[int] = set()
    out = []
    for t in x:
        t = int(t)
        if t not in seen:
            seen.add(t)
            out.append(t)
    return out


def frame_identity(x, vocab: VocabSpec) -> ProcSample:
    x = _check_input(x)
    return _framed([*x, vocab.sep], x, "identity")


def frame_set(x, vocab: VocabSpec) -> ProcSample:
    x = _check_input(x)
    return _framed([*x, vocab.sep], dedup(x), "set")


def frame_union(a, b, vocab: VocabSpec) -> ProcSample:
    a = _check_input(a)
    b = np.asarray(b, dtype=np.int64)
    return _framed([*a, vocab["delim"], *b, vocab.sep], dedup([*a, *b]), "union",
                   {"split": [len(a), len(b)]})


def frame_delete(x, d: int, vocab: VocabSpec) -> ProcSample:
    x = _check_input(x)
    return _framed([*x, vocab["delim"], d, vocab.sep], x[x != d], "delete")


def frame_sort(x, vocab: VocabSpec) -> ProcSample:
    x = _check_input(x)
    return _framed([*x, vocab.sep], np.sort(x, kind="stable"), "sort")


def frame_reverse(x, vocab: VocabSpec) -> ProcSample:
    x = _check_input(x)
    return _framed([*x, vocab.sep], x[::-1], "reverse")


def frame_stack(ops, vocab: VocabSpec) -> ProcSample:
    """``ops`` holds element ids (push) and ``vocab['pop']`` (pop)."""
    ops = _check_input(ops)
    pop = vocab["pop"]
    stack: list[int] = []
    for op in ops:
        if op == pop:
            if not stack:
                raise ValueError("pop on empty stack")
            stack.pop()
        else:
            if op in stack:
                raise ValueError(f"token {op} is already on the stack")
            stack.append(int(op))
    return _framed([*ops, vocab.sep], stack[::-1], "stack")


# -- sampling ---------------------------------------------------------------

def _elements(cfg: GenConfig, rng, n: int) -> np.ndarray:
    return rng.integers(0, cfg.vocab.n_elements, size=n)


def draw_length(cfg: GenConfig, rng) -> int:
    """``input_length``, or uniform in ``[min_length, input_length]`` when set."""
    if cfg.min_length is None:
        return cfg.input_length
    return int(rng.integers(cfg.min_length, cfg.input_length + 1))


def gen_identity(cfg: GenConfig, rng) -> ProcSample:
    return frame_identity(_elements(cfg, rng, draw_length(cfg, rng)), cfg.vocab)


def gen_set(cfg: GenConfig, rng) -> ProcSample:
    return frame_set(_elements(cfg, rng, draw_length(cfg, rng)), cfg.vocab)


def gen_union(cfg: GenConfig, rng) -> ProcSample:
    n = draw_length(cfg, rng)
    a, b = (n + 1) // 2, n // 2
    return frame_union(_elements(cfg, rng, a), _elements(cfg, rng, b), cfg.vocab)


def gen_delete(cfg: GenConfig, rng) -> ProcSample:
    x = _elements(cfg, rng, draw_length(cfg, rng))
    d = int(rng.choice(np.unique(x)))
    return frame_delete(x, d, cfg.vocab)


def gen_sort(cfg: GenConfig, rng) -> ProcSample:
    return frame_sort(_elements(cfg, rng, draw_length(cfg, rng)), cfg.vocab)


def gen_reverse(cfg: GenConfig, rng) -> ProcSample:
    return frame_reverse(_elements(cfg, rng, draw_length(cfg, rng)), cfg.vocab)


def gen_stack(cfg: GenConfig, rng) -> ProcSample:
    """Push with prob 0.75 in the first two thirds, pop with prob 0.75 after.

    Illegal draws (pop on an empty stack, push onto a full element range) are
    resampled as the other operation.
    """
    n, vocab = draw_length(cfg, rng), cfg.vocab
    n_el = vocab.n_elements
    stack: list[int] = []
    on_stack = np.zeros(n_el, dtype=bool)
    ops = []
    resampled = 0
    n_push = 0
    for i in range(n):
        p_push = 0.75 if 3 * i < 2 * n else 0.25
        push = rng.random() < p_push
        if push and len(stack) == n_el or not push and not stack:
            push = not push
            resampled += 1
        if push:
            free = np.flatnonzero(~on_stack)
            t = int(free[rng.integers(len(free))])
            on_stack[t] = True
            stack.append(t)
            ops.append(t)
            n_push += 1
        else:
            on_stack[stack.pop()] = False
            ops.append(vocab["pop"])
    s = frame_stack(ops, vocab)
    s.meta.update(n_push=n_push, n_pop=n - n_push, resampled=resampled)
    return s


def _lm_sample(tokens, tag, meta=None) -> ProcSample:
    mask = np.ones(len(tokens), dtype=bool)
    mask[0] = False
    return ProcSample(np.asarray(tokens, dtype=np.int64), mask, tag, meta or {})


def gen_dyck(cfg: GenConfig, rng) -> ProcSample:
    n, k = cfg.input_length, cfg.k
    if n % 2:
        raise GenConfigError("Dyck length must be even")
    out = np.empty(n, dtype=np.int64)
    stack: list[int] = []
    for t in range(n):
        remaining = n - t
        if stack and (len(stack) == remaining or rng.random() >= cfg.p_open):
            out[t] = k + stack.pop()
        else:
            b = int(rng.integers(k))
            stack.append(b)
            out[t] = b
    return _lm_sample(out, "dyck")


def gen_dyck_shuffle(cfg: GenConfig, rng) -> ProcSample:
    """Per-type balanced brackets without nesting; no forced closure at the end."""
    n, k = cfg.input_length, cfg.k
    counts = np.zeros(k, dtype=np.int64)
    out = np.empty(n, dtype=np.int64)
    for t in range(n):
        open_types = np.flatnonzero(counts)
        if len(open_types) == 0 or rng.random() < cfg.p_open:
            b = int(rng.integers(k))
            counts[b] += 1
            out[t] = b
        else:
            b = int(open_types[rng.integers(len(open_types))])
            counts[b] -= 1
            out[t] = k + b
    return _lm_sample(out, "dyck_shuffle", {"unclosed": int(counts.sum())})


def gen_eca_sequence(cfg: GenConfig, rng, rule: int = 110) -> np.ndarray:
    state = rng.integers(0, 2, size=cfg.eca_width, dtype=np.uint8)
    return eca.evolve(state, rule, cfg.eca_steps)


_GENERATORS = {
    "identity": gen_identity, "set": gen_set, "union": gen_union, "delete": gen_delete,
    "sort": gen_sort, "reverse": gen_reverse, "stack": gen_stack, "dyck": gen_dyck,
    "dyck_shuffle": gen_dyck_shuffle,
}


def generate(cfg: GenConfig, rng) -> ProcSample:
    """Draw one token sample for ``cfg`` (ECA has no token samples)."""
    try:
        fn = _GENERATORS[cfg.kind]
    except KeyError:
        raise GenConfigError(f"{cfg.kind!r} does not produce token samples") from None
    return fn(cfg, rng)


def sample_stream(cfg: GenConfig, rng=None) -> Iterator[ProcSample]:
    """Endless stream; identical (cfg, seed) gives identical streams."""
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    while True:
        yield generate(cfg, rng)


def shuffle_sample(s: ProcSample, rng) -> ProcSample:
    """Permute every token of the sample, separators included.

    The loss mask keeps its positions; only the ids move.
    """
    return ProcSample(rng.permutation(s.tokens), s.loss_mask.copy(), s.source_tag,
                      {**s.meta, "shuffled": True})


def curriculum_start(kind: str) -> int:
    return 2 if kind == "set" else 4
