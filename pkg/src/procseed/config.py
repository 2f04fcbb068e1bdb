"""TOML configuration loading shared by the matrix runner and the CLI."""
from __future__ import annotations

import sys
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .model import PRESETS, ModelConfig
from .training import CurriculumSchedule, ExperimentPlan, RegularizerConfig, TrainConfig, preset
from .training.config import pretrain_preset
from .transfer import TransferSelector


class ConfigError(ValueError):
    """Malformed or inconsistent configuration (CLI exit code 2)."""


def load_toml(path) -> dict:
    try:
        with open(path, "rb") as f:
            return tomllib.load(f)
    except FileNotFoundError as e:
        raise ConfigError(f"config file not found: {path}") from e
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"{path}: {e}") from e


def as_dict(config) -> dict:
    return load_toml(config) if isinstance(config, (str, Path)) else dict(config)


def _check_keys(d: dict, allowed, where: str):
    extra = set(d) - set(allowed)
    if extra:
        raise ConfigError(f"unknown keys in [{where}]: {sorted(extra)}")


def train_config(d: dict | None, default: TrainConfig, where: str) -> TrainConfig:
    """``default`` overridden by ``d``; a ``preset`` key swaps the starting point."""
    d = dict(d or {})
    base = default
    if "preset" in d:
        try:
            base = preset(d.pop("preset"))
        except KeyError as e:
            raise ConfigError(str(e)) from e
    _check_keys(d, TrainConfig.__dataclass_fields__, where)
    if "betas" in d:
        d["betas"] = tuple(d["betas"])
    try:
        return base.replace(**d)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"[{where}]: {e}") from e


def pretrain_config(d: dict | None, kind: str) -> TrainConfig:
    return train_config(d, pretrain_preset(kind), "pretrain")


def model_config(d: dict | None) -> ModelConfig:
    d = dict(d or {})
    name = d.pop("preset", "tiny")
    if name not in PRESETS:
        raise ConfigError(f"unknown model preset {name!r}")
    _check_keys(d, ModelConfig.__dataclass_fields__, "model")
    try:
        return PRESETS[name].replace(**d)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"[model]: {e}") from e


def curriculum_config(d) -> CurriculumSchedule | None:
    if not d:
        return None
    if d is True:
        return CurriculumSchedule()
    try:
        return CurriculumSchedule(**d)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"[curriculum]: {e}") from e


def selector_config(mode: str, d: dict | None) -> TransferSelector:
    d = dict(d or {})
    _check_keys(d, ("heads", "embedding_init"), "selector")
    try:
        return TransferSelector(mode, **d)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"selector {mode!r}: {e}") from e


def regularizer_config(d: dict | None) -> RegularizerConfig | None:
    if not d:
        return None
    try:
        return RegularizerConfig(**d)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"[regularizer]: {e}") from e


PLAN_KEYS = ("target", "target_kw", "procedural", "procedural_kw", "t1", "t2", "seeds", "setting",
             "t2_grid", "metric", "eval_samples", "selector", "model", "pretrain", "finetune",
             "curriculum")


def plan_config(config) -> ExperimentPlan:
    """Build an :class:`ExperimentPlan` from a TOML path or dict."""
    d = as_dict(config)
    _check_keys(d, PLAN_KEYS, "plan")
    if "target" not in d:
        raise ConfigError("plan needs a 'target' task")
    sel = dict(d.get("selector", {}))
    mode = sel.pop("mode", "full")
    procedural = d.get("procedural")
    try:
        return ExperimentPlan(
            target=d["target"], procedural=procedural, procedural_kw=dict(d.get("procedural_kw", {})),
            t1=int(d.get("t1", 0)), t2=int(d.get("t2", 256 * 62 * 2000)),
            selector=selector_config(mode, sel), seeds=tuple(d.get("seeds", (0, 1, 2))),
            setting=d.get("setting", "additive"), model=model_config(d.get("model")),
            pretrain=pretrain_config(d.get("pretrain"), procedural) if procedural else None,
            finetune=train_config(d.get("finetune"), preset("reduced"), "finetune"),
            curriculum=curriculum_config(d.get("curriculum")),
            target_kw=dict(d.get("target_kw", {})), t2_grid=tuple(d.get("t2_grid", ())),
            metric=d.get("metric", "token_accuracy"), eval_samples=int(d.get("eval_samples", 1000)))
    except ConfigError:
        raise
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e)) from e
