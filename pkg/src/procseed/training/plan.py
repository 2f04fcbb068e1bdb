"""Two-phase experiment plans: procedural pretraining followed by target training.

An :class:`ExperimentPlan` fixes a procedural budget ``t1`` and a target
budget ``t2`` (both in tokens). ``t1 == 0`` is the baseline. The additive
setting compares the treatment against the baseline at a fixed ``t2``. The
substitutive setting searches a ``t2`` grid for the smallest target budget
at which the treatment matches the baseline's full-budget metric.
"""
from __future__ import annotations

import math
import statistics
from dataclasses import dataclass, field, asdict
from typing import Callable

from ..evaluation import evaluate
from ..model import ModelConfig, PRESETS, init_params
from ..sources import make_source
from ..transfer import NoiseSpec, TransferSelector, add_noise, apply_selector, shuffle_weights
from .config import CurriculumSchedule, TrainConfig, pretrain_preset, preset
from .trainer import train

SETTINGS = ("additive", "substitutive")
METRICS = {"token_accuracy": "max", "loss": "min", "perplexity": "min"}


class PlanError(ValueError):
    pass


@dataclass
class ExperimentPlan:
    target: str
    procedural: str | None = None
    procedural_kw: dict = field(default_factory=dict)
    t1: int = 0
    t2: int = 256 * 62 * 2000
    selector: TransferSelector = field(default_factory=lambda: TransferSelector("full"))
    seeds: tuple[int, ...] = (0, 1, 2)
    setting: str = "additive"
    model: ModelConfig = field(default_factory=lambda: PRESETS["tiny"])
    pretrain: TrainConfig | None = None
    finetune: TrainConfig = field(default_factory=lambda: preset("reduced"))
    curriculum: CurriculumSchedule | None = None
    target_kw: dict = field(default_factory=dict)
    t2_grid: tuple[int, ...] = ()
    metric: str = "token_accuracy"
    eval_samples: int = 1000

    def __post_init__(self):
        if self.setting not in SETTINGS:
            raise PlanError(f"setting must be one of {SETTINGS}")
        if self.metric not in METRICS:
            raise PlanError(f"metric must be one of {sorted(METRICS)}")
        if self.t1 < 0 or self.t2 <= 0:
            raise PlanError("token budgets must satisfy t1 >= 0, t2 > 0")
        if self.t1 > 0 and self.procedural is None:
            raise PlanError("t1 > 0 needs a procedural generator")
        if not self.seeds:
            raise PlanError("at least one seed is required")
        if self.setting == "substitutive":
            grid = sorted(self.t2_grid)
            if not grid or grid[0] <= 0 or grid[-1] > self.t2:
                raise PlanError("substitutive plans need a positive t2_grid bounded by t2")

    @property
    def is_baseline(self) -> bool:
        return self.t1 == 0

    def baseline(self) -> "ExperimentPlan":
        return _replace(self, t1=0)


def _replace(plan, **kw):
    d = {f: getattr(plan, f) for f in plan.__dataclass_fields__}
    d.update(kw)
    return ExperimentPlan(**d)


@dataclass
class SeedStats:
    values: list[float]

    @property
    def mean(self) -> float:
        return math.fsum(self.values) / len(self.values)

    @property
    def sd(self) -> float:
        return statistics.stdev(self.values) if len(self.values) > 1 else 0.0

    def to_dict(self):
        return {"mean": self.mean, "sd": self.sd, "values": list(self.values)}


@dataclass
class ExperimentReport:
    setting: str
    metric: str
    t1: int
    t2: int
    baseline: SeedStats
    treatment: SeedStats
    matched_t2: int | None = None
    delta_t2: int | None = None
    search: list[tuple[int, float]] = field(default_factory=list)

    @property
    def improvement(self) -> float:
        sign = 1.0 if METRICS[self.metric] == "max" else -1.0
        return sign * (self.treatment.mean - self.baseline.mean)

    def to_dict(self):
        d = asdict(self)
        d["baseline"] = self.baseline.to_dict()
        d["treatment"] = self.treatment.to_dict()
        d["improvement"] = self.improvement
        return d


Runner = Callable[[ExperimentPlan, int, int, int], float]


@dataclass
class CellSpec:
    """One pretrain → perturb → transfer → fine-tune → evaluate run.

    ``procedural=None`` is the baseline (fresh init). The pretraining stops
    at ``pretrain.max_steps`` or ``pretrain.max_tokens``, whichever is first;
    fine-tuning likewise.
    """

    target: str
    seed: int
    procedural: str | None = None
    procedural_kw: dict = field(default_factory=dict)
    target_kw: dict = field(default_factory=dict)
    model: ModelConfig = field(default_factory=lambda: PRESETS["tiny"])
    pretrain: TrainConfig | None = None
    finetune: TrainConfig = field(default_factory=lambda: preset("reduced"))
    curriculum: CurriculumSchedule | None = None
    selector: TransferSelector = field(default_factory=lambda: TransferSelector("full"))
    perturbation: str = "none"
    eval_samples: int = 1000

    def pretrain_key(self):
        return repr((self.procedural, sorted(self.procedural_kw.items()), self.model,
                     self.pretrain, self.curriculum, self.seed))


@dataclass
class CellResult:
    report: object
    finetune: object
    pretrain: object = None


def parse_perturbation(text: str):
    """``none``, ``shuffle`` or ``noise:<sigma>``."""
    if text in ("none", "shuffle"):
        return text, None
    kind, _, arg = text.partition(":")
    if kind == "noise":
        try:
            sigma = float(arg)
        except ValueError:
            sigma = -1.0
        if sigma >= 0:
            return kind, sigma
    raise PlanError(f"unknown perturbation {text!r}")


def perturb(p, text: str, seed: int):
    kind, sigma = parse_perturbation(text)
    if kind == "shuffle":
        return shuffle_weights(p, seed)
    if kind == "noise":
        return add_noise(p, NoiseSpec(sigma, seed))
    return p


def pretrain_cell(spec: CellSpec, log=None):
    src = make_source(spec.procedural, seed=spec.seed, **spec.procedural_kw)
    cfg = (spec.pretrain or pretrain_preset(spec.procedural)).replace(seed=spec.seed)
    mcfg = spec.model
    if src.binary:
        mcfg = mcfg.replace(io_variant="binary", vocab_size=src.cfg.eca_width)
    else:
        mcfg = mcfg.replace(vocab_size=src.vocab.size)
    return train(init_params(mcfg, spec.seed), src, cfg, curriculum=spec.curriculum,
                 phase="procedural", log=log)


def run_cell(spec: CellSpec, pretrained=None, log=None) -> CellResult:
    """Run one cell; ``pretrained`` (a TrainResult) skips the procedural phase."""
    pre = None
    src = make_source(spec.target, seed=spec.seed, **spec.target_kw)
    mcfg = spec.model.replace(vocab_size=src.vocab.size)
    if spec.procedural is None:
        p = init_params(mcfg, 10_000 + spec.seed)
    else:
        pre = pretrained if pretrained is not None else pretrain_cell(spec)
        source_params = perturb(pre.params, spec.perturbation, 20_000 + spec.seed)
        p = apply_selector(source_params, mcfg, spec.selector, 10_000 + spec.seed)
    cfg = spec.finetune.replace(seed=spec.seed)
    res = train(p, src, cfg, phase="target", log=log)
    rep = evaluate(res.params, src.reseeded(spec.seed + 2_000_003), spec.eval_samples)
    return CellResult(rep, res, pre)


class DefaultRunner:
    """Runs real cells; pretrained checkpoints are cached per (source, seed, t1)."""

    def __init__(self):
        self._pretrained = {}

    def spec(self, plan: ExperimentPlan, seed: int, t1: int, t2: int) -> CellSpec:
        pre_cfg = None
        if t1 > 0:
            pre_cfg = (plan.pretrain or pretrain_preset(plan.procedural)).replace(max_tokens=t1)
        return CellSpec(plan.target, seed, plan.procedural if t1 > 0 else None, plan.procedural_kw,
                        plan.target_kw, plan.model, pre_cfg, plan.finetune.replace(max_tokens=t2),
                        plan.curriculum, plan.selector, "none", plan.eval_samples)

    def __call__(self, plan: ExperimentPlan, seed: int, t1: int, t2: int) -> float:
        spec = self.spec(plan, seed, t1, t2)
        pre = None
        if spec.procedural is not None:
            key = spec.pretrain_key()
            if key not in self._pretrained:
                self._pretrained[key] = pretrain_cell(spec)
            pre = self._pretrained[key]
        return float(getattr(run_cell(spec, pre).report, plan.metric))


def _matches(value: float, reference: float, direction: str) -> bool:
    return value >= reference if direction == "max" else value <= reference


def _stats(runner, plan, t1, t2) -> SeedStats:
    return SeedStats([float(runner(plan, s, t1, t2)) for s in plan.seeds])


def run_plan(plan: ExperimentPlan, runner: Runner | None = None) -> ExperimentReport:
    """Execute ``plan``; ``runner(plan, seed, t1, t2)`` returns one metric value."""
    runner = runner or DefaultRunner()
    base = _stats(runner, plan, 0, plan.t2)
    treat = base if plan.is_baseline else _stats(runner, plan, plan.t1, plan.t2)
    report = ExperimentReport(plan.setting, plan.metric, plan.t1, plan.t2, base, treat)
    if plan.setting == "additive" or plan.is_baseline:
        return report
    # smallest grid budget whose seed-mean treatment metric reaches the baseline;
    # assumes the metric is monotone in t2
    grid = sorted(set(plan.t2_grid))
    direction = METRICS[plan.metric]
    lo, hi = 0, len(grid) - 1
    found = None
    while lo <= hi:
        mid = (lo + hi) // 2
        value = _stats(runner, plan, plan.t1, grid[mid]).mean
        report.search.append((grid[mid], value))
        if _matches(value, base.mean, direction):
            found, hi = mid, mid - 1
        else:
            lo = mid + 1
    if found is not None:
        report.matched_t2 = grid[found]
        report.delta_t2 = plan.t2 - grid[found]
    return report
