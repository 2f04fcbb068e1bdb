"""Training, curriculum and regularizer settings with named presets."""
from __future__ import annotations

from dataclasses import dataclass, field, asdict, replace


@dataclass
class TrainConfig:
    lr: float = 1e-3
    weight_decay: float = 1e-3
    batch_size: int = 1000
    max_steps: int = 10_000
    warmup_steps: int = 0
    schedule: str = "constant"
    grad_clip: float | None = None
    eval_interval: int | None = None   # None: spread n_eval_checks evenly
    n_eval_checks: int = 100
    val_size: int = 1000
    max_tokens: int | None = None
    target_accuracy: float | None = None
    seed: int = 0
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8

    def __post_init__(self):
        if self.schedule not in ("constant", "cosine"):
            raise ValueError(f"unknown schedule {self.schedule!r}")
        if self.lr <= 0 or self.batch_size < 1 or self.max_steps < 0:
            raise ValueError("invalid training hyperparameters")

    @property
    def interval(self) -> int:
        if self.eval_interval:
            return self.eval_interval
        return max(1, self.max_steps // max(self.n_eval_checks, 1))

    def replace(self, **kw) -> "TrainConfig":
        return replace(self, **kw)

    def to_dict(self):
        return asdict(self)


TRANSFORM_KINDS = ("identity", "set", "union", "delete", "sort", "reverse", "stack")


def preset(name: str, **overrides) -> TrainConfig:
    """Named presets.

    ``algorithmic``   fine-tuning on haystack/addition/reversed addition/sorting
    ``multiplication`` the larger model's fine-tuning
    ``transform``     procedural pretraining on sequence transforms and stack
    ``dyck``          procedural pretraining on the Dyck family
    ``eca``           ECA pretraining
    ``reduced``       desk-scale fine-tuning used by the acceptance suite
    """
    table = {
        "algorithmic": TrainConfig(lr=1e-3, weight_decay=1e-3, batch_size=1000, max_steps=10_000),
        "multiplication": TrainConfig(lr=1e-3, weight_decay=1e-3, batch_size=64,
                                      max_steps=156_250, warmup_steps=500),
        "transform": TrainConfig(lr=5e-4, weight_decay=0.01, batch_size=256, max_steps=1_000_000),
        "dyck": TrainConfig(lr=5e-5, weight_decay=0.01, batch_size=256, max_steps=1_000_000),
        "eca": TrainConfig(lr=2e-6, weight_decay=0.01, batch_size=64, max_steps=10_000,
                           warmup_steps=1_000, schedule="cosine", grad_clip=1.0),
        "reduced": TrainConfig(lr=1e-3, weight_decay=1e-3, batch_size=256, max_steps=2_000),
    }
    if name not in table:
        raise KeyError(f"unknown preset {name!r}; choose from {sorted(table)}")
    cfg = table[name]
    if name == "eca" and "max_steps" in overrides and "warmup_steps" not in overrides:
        overrides["warmup_steps"] = overrides["max_steps"] // 10
    return cfg.replace(**overrides)


def pretrain_preset(kind: str, **overrides) -> TrainConfig:
    if kind in ("dyck", "dyck_shuffle"):
        return preset("dyck", **overrides)
    if kind == "eca110":
        return preset("eca", **overrides)
    return preset("transform", **overrides)


@dataclass
class CurriculumSchedule:
    start: int = 4
    step: int = 2
    max_length: int = 20
    threshold: float = 0.99

    def __post_init__(self):
        if self.step <= 0:
            raise ValueError("curriculum step must be positive")
        if not 0 < self.threshold <= 1:
            raise ValueError("threshold must lie in (0, 1]")
        if self.start > self.max_length:
            raise ValueError("start length exceeds max length")

    def next_length(self, length: int, accuracy: float) -> int:
        if accuracy >= self.threshold and length < self.max_length:
            return min(length + self.step, self.max_length)
        return length

    @classmethod
    def for_kind(cls, kind: str, **kw) -> "CurriculumSchedule":
        return cls(start=2 if kind == "set" else 4, **kw)


@dataclass
class RegularizerConfig:
    heads: list[tuple[int, int]] = field(default_factory=list)
    target: float = 0.8
    weight: float = 1.0

    def __post_init__(self):
        if self.target < 0:
            raise ValueError("target entropy must be >= 0")
        self.heads = [tuple(h) for h in self.heads]
