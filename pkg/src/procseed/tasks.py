"""Algorithmic evaluation tasks: haystack retrieval, arithmetic and sorting."""
from __future__ import annotations

from dataclasses import dataclass, asdict
from typing import Iterator

import numpy as np

from .datagen.generators import ProcSample
from .datagen.vocab import VocabSpec, sequence_vocab

TASK_KINDS = ("haystack", "addition", "reversed_addition", "multiplication", "sorting")


class TaskConfigError(ValueError):
    pass


@dataclass
class TaskSample(ProcSample):
    answer: np.ndarray | None = None


@dataclass
class TaskConfig:
    kind: str
    k_pairs: int = 30
    n_digits: int | None = None
    n_items: int = 10
    element_range: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.kind not in TASK_KINDS:
            raise TaskConfigError(f"unknown task {self.kind!r}")
        if self.n_digits is None:
            self.n_digits = 10 if self.kind == "reversed_addition" else 5
        if self.kind == "haystack" and self.k_pairs > self.element_range // 2:
            raise TaskConfigError(
                f"{self.k_pairs} distinct markers need at least {2 * self.k_pairs} elements")

    @property
    def vocab(self) -> VocabSpec:
        return task_vocab(self.kind, self.element_range)

    def to_dict(self) -> dict:
        return asdict(self)


def task_vocab(kind: str, element_range: int = 100) -> VocabSpec:
    if kind in ("haystack", "sorting"):
        return sequence_vocab(element_range)
    op = "times" if kind == "multiplication" else "plus"
    return VocabSpec(13, 10, None, 12, {op: 10, "eq": 11})


def _task_sample(prompt, answer, kind) -> TaskSample:
    prompt = np.asarray(prompt, dtype=np.int64)
    answer = np.asarray(answer, dtype=np.int64)
    tokens = np.concatenate([prompt, answer])
    mask = np.zeros(len(tokens), dtype=bool)
    mask[len(prompt):] = True
    return TaskSample(tokens, mask, kind, answer=answer)


def digits(value: int, width: int) -> list[int]:
    """Most-significant-first, zero padded to ``width``."""
    s = str(value).zfill(width)
    if len(s) > width:
        raise ValueError(f"{value} does not fit in {width} digits")
    return [int(c) for c in s]


def gen_haystack(cfg: TaskConfig, rng) -> TaskSample:
    """Markers come from the lower half of the element range, values from the upper half."""
    half = cfg.element_range // 2
    markers = rng.choice(half, size=cfg.k_pairs, replace=False)
    values = rng.integers(half, cfg.element_range, size=cfg.k_pairs)
    u = int(rng.integers(cfg.k_pairs))
    prompt = np.empty(2 * cfg.k_pairs + 1, dtype=np.int64)
    prompt[0:-1:2] = markers
    prompt[1:-1:2] = values
    prompt[-1] = markers[u]
    return _task_sample(prompt, [values[u]], "haystack")


def _operands(cfg: TaskConfig, rng) -> tuple[int, int]:
    """Uniform over ``[0, 10**n)``; leading zeros are allowed."""
    if cfg.n_digits <= 18:
        hi = 10 ** cfg.n_digits
        return int(rng.integers(hi)), int(rng.integers(hi))
    draw = lambda: int("".join(map(str, rng.integers(0, 10, size=cfg.n_digits))))
    return draw(), draw()


def frame_addition(a: int, b: int, n: int, reverse: bool = False) -> TaskSample:
    vocab = task_vocab("addition")
    da, db, ds = digits(a, n), digits(b, n), digits(a + b, n + 1)
    if reverse:
        da, db, ds = da[::-1], db[::-1], ds[::-1]
    kind = "reversed_addition" if reverse else "addition"
    return _task_sample([*da, vocab["plus"], *db, vocab["eq"]], ds, kind)


def frame_multiplication(a: int, b: int, n: int) -> TaskSample:
    vocab = task_vocab("multiplication")
    return _task_sample([*digits(a, n), vocab["times"], *digits(b, n), vocab["eq"]],
                        digits(a * b, 2 * n), "multiplication")


def gen_addition(cfg: TaskConfig, rng) -> TaskSample:
    return frame_addition(*_operands(cfg, rng), cfg.n_digits)


def gen_reversed_addition(cfg: TaskConfig, rng) -> TaskSample:
    return frame_addition(*_operands(cfg, rng), cfg.n_digits, reverse=True)


def gen_multiplication(cfg: TaskConfig, rng) -> TaskSample:
    return frame_multiplication(*_operands(cfg, rng), cfg.n_digits)


def frame_sorting(x, element_range: int = 100) -> TaskSample:
    x = np.asarray(x, dtype=np.int64)
    return _task_sample([*x, sequence_vocab(element_range).sep], np.sort(x), "sorting")


def gen_sorting_task(cfg: TaskConfig, rng) -> TaskSample:
    return frame_sorting(rng.integers(0, cfg.element_range, size=cfg.n_items), cfg.element_range)


_TASKS = {
    "haystack": gen_haystack, "addition": gen_addition,
    "reversed_addition": gen_reversed_addition, "multiplication": gen_multiplication,
    "sorting": gen_sorting_task,
}


def generate_task(cfg: TaskConfig, rng) -> TaskSample:
    return _TASKS[cfg.kind](cfg, rng)


def task_stream(cfg: TaskConfig, rng=None) -> Iterator[TaskSample]:
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    while True:
        yield generate_task(cfg, rng)
