"""Experiment matrices: procedural source × selector × perturbation × task × seed.

Per-cell seeds come from ``SeedSequence([master_seed, i])`` for seed index
``i``, so a cell's seed does not depend on which other cells exist. All
cells sharing a seed index share that seed, which pairs treatment and
baseline runs. Pretraining runs once per (source, seed index) and is reused
by every selector, perturbation and task.
"""
from __future__ import annotations

import csv
import io
import json
import math
import shutil
import statistics
import time
import traceback
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import (
    ConfigError, as_dict, curriculum_config, model_config, pretrain_config, selector_config,
    train_config,
)
from .model import save
from .manifest import RunManifest
from .tasks import TASK_KINDS
from .datagen.generators import KINDS
from .training import CellSpec, DivergenceError, preset, pretrain_cell, run_cell
from .training.plan import parse_perturbation

BASELINE = "none"
MATRIX_KEYS = ("name", "master_seed", "n_seeds", "sources", "selectors", "perturbations", "tasks",
               "baseline", "eval_samples", "model", "pretrain", "curriculum", "finetune",
               "selector", "source_kw", "task_kw")


class RunDirExistsError(FileExistsError):
    pass


def cell_seed(master_seed: int, index: int) -> int:
    return int(np.random.SeedSequence([master_seed, index]).generate_state(1)[0])


def _safe(name: str) -> str:
    return name.replace(":", "-").replace("/", "_")


@dataclass
class MatrixConfig:
    raw: dict
    name: str
    master_seed: int
    n_seeds: int
    sources: list[str]
    selectors: list[str]
    perturbations: list[str]
    tasks: list[str]
    baseline: bool
    eval_samples: int

    def cells(self) -> list[dict]:
        out = []
        for task in self.tasks:
            combos = [(s, sel, pert) for s in self.sources for sel in self.selectors
                      for pert in self.perturbations]
            if self.baseline:
                combos.insert(0, (BASELINE, BASELINE, BASELINE))
            for source, sel, pert in combos:
                for i in range(self.n_seeds):
                    out.append({"task": task, "source": source, "selector": sel,
                                "perturbation": pert, "seed_index": i,
                                "seed": cell_seed(self.master_seed, i)})
        return out

    def spec(self, cell: dict) -> CellSpec:
        raw = self.raw
        source = None if cell["source"] == BASELINE else cell["source"]
        sel = selector_config("full" if source is None else cell["selector"], raw.get("selector"))
        return CellSpec(
            target=cell["task"], seed=cell["seed"], procedural=source,
            procedural_kw=dict(raw.get("source_kw", {}).get(source, {})) if source else {},
            target_kw=dict(raw.get("task_kw", {}).get(cell["task"], {})),
            model=model_config(raw.get("model")),
            pretrain=pretrain_config(raw.get("pretrain"), source) if source else None,
            finetune=train_config(raw.get("finetune"), preset("reduced"), "finetune"),
            curriculum=curriculum_config(raw.get("curriculum")) if source else None,
            selector=sel, perturbation="none" if source is None else cell["perturbation"],
            eval_samples=self.eval_samples)


def load_matrix_config(config) -> MatrixConfig:
    d = as_dict(config)
    extra = set(d) - set(MATRIX_KEYS)
    if extra:
        raise ConfigError(f"unknown matrix keys: {sorted(extra)}")
    try:
        cfg = MatrixConfig(
            raw=d, name=str(d.get("name", "matrix")), master_seed=int(d.get("master_seed", 0)),
            n_seeds=int(d.get("n_seeds", 3)), sources=list(d.get("sources", [])),
            selectors=list(d.get("selectors", ["full"])),
            perturbations=list(d.get("perturbations", ["none"])), tasks=list(d.get("tasks", [])),
            baseline=bool(d.get("baseline", True)), eval_samples=int(d.get("eval_samples", 1000)))
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e)) from e
    if cfg.n_seeds < 1 or not cfg.tasks or not (cfg.sources or cfg.baseline):
        raise ConfigError("matrix needs tasks, at least one seed and a source or the baseline")
    for t in cfg.tasks:
        if t not in TASK_KINDS:
            raise ConfigError(f"unknown task {t!r}")
    for s in cfg.sources:
        if s not in KINDS:
            raise ConfigError(f"unknown procedural source {s!r}")
    for p in cfg.perturbations:
        try:
            parse_perturbation(p)
        except ValueError as e:
            raise ConfigError(str(e)) from e
    # build every spec once so configuration errors surface before any training
    for cell in cfg.cells():
        cfg.spec(cell)
    return cfg


def cell_dir(run_dir: Path, cell: dict) -> Path:
    return (Path(run_dir) / "cells" / cell["task"] / cell["source"] / _safe(cell["selector"])
            / _safe(cell["perturbation"]) / f"seed{cell['seed_index']}")


@dataclass
class MatrixResult:
    run_dir: Path
    rows: list[dict] = field(default_factory=list)

    @property
    def failures(self) -> list[dict]:
        return [r for r in self.rows if r["status"] != "ok"]


def aggregate(rows: list[dict]) -> list[dict]:
    """Mean and sample standard deviation over seeds for each configuration."""
    groups: dict[tuple, list[dict]] = {}
    for r in rows:
        if r["status"] == "ok":
            key = (r["task"], r["source"], r["selector"], r["perturbation"])
            groups.setdefault(key, []).append(r)
    out = []
    for (task, source, sel, pert), rs in groups.items():
        row = {"task": task, "source": source, "selector": sel, "perturbation": pert, "n": len(rs)}
        for m in ("token_accuracy", "perplexity", "sequence_accuracy"):
            vals = [r[m] for r in rs]
            row[f"{m}_mean"] = math.fsum(vals) / len(vals)
            row[f"{m}_sd"] = statistics.stdev(vals) if len(vals) > 1 else 0.0
        out.append(row)
    return out


def aggregate_csv(table: list[dict]) -> str:
    if not table:
        return ""
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(table[0]), lineterminator="\n")
    w.writeheader()
    w.writerows(table)
    return buf.getvalue()


def write_aggregate(run_dir, rows) -> list[dict]:
    table = aggregate(rows)
    Path(run_dir, "aggregate.csv").write_text(aggregate_csv(table))
    Path(run_dir, "aggregate.json").write_text(json.dumps(table, indent=2) + "\n")
    return table


def collect_rows(run_dir) -> list[dict]:
    rows = []
    for p in sorted(Path(run_dir, "cells").rglob("report.json")):
        rows.append(json.loads(p.read_text())["row"])
    return rows


def _prepare(run_dir: Path, force: bool):
    if run_dir.exists() and any(run_dir.iterdir()):
        if not force:
            raise RunDirExistsError(f"{run_dir} exists; pass --force to overwrite")
        shutil.rmtree(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)


def run_matrix(config, run_dir, force: bool = False, cell_fn=None, log=print) -> MatrixResult:
    """Execute every cell, recording failures without stopping the matrix."""
    cell_fn = cell_fn or run_cell
    cfg = load_matrix_config(config)
    run_dir = Path(run_dir)
    _prepare(run_dir, force)
    started = time.time()
    (run_dir / "config.json").write_text(json.dumps(cfg.raw, indent=2, sort_keys=True) + "\n")
    result = MatrixResult(run_dir)
    pretrained: dict[tuple, object] = {}
    for cell in cfg.cells():
        out = cell_dir(run_dir, cell)
        out.mkdir(parents=True, exist_ok=True)
        row = {k: cell[k] for k in ("task", "source", "selector", "perturbation", "seed_index", "seed")}
        t0 = time.time()
        spec = cfg.spec(cell)
        try:
            pre = None
            if spec.procedural is not None:
                key = spec.pretrain_key()
                if key not in pretrained:
                    pdir = run_dir / "pretrained" / cell["source"] / f"seed{cell['seed_index']}"
                    pdir.mkdir(parents=True, exist_ok=True)
                    with open(pdir / "metrics.jsonl", "w") as f:
                        pre = pretrain_cell(spec, log=f)
                    save(pre.params, pdir / "model.ckpt")
                    pretrained[key] = pre
                pre = pretrained[key]
            with open(out / "metrics.jsonl", "w") as f:
                res = cell_fn(spec, pre, log=f)
            save(res.finetune.params, out / "model.ckpt")
            row.update(status="ok", **{k: getattr(res.report, k) for k in
                                       ("token_accuracy", "perplexity", "sequence_accuracy", "loss")})
            detail = {"eval": res.report.to_dict(), "best_step": res.finetune.best_step,
                      "tokens_seen": res.finetune.tokens_seen,
                      "pretrain_tokens": None if pre is None else pre.tokens_seen}
        except DivergenceError as e:
            row.update(status="diverged", error=str(e))
            detail = {}
        except Exception as e:  # recorded; the matrix continues
            row.update(status="failed", error=f"{type(e).__name__}: {e}")
            detail = {"traceback": traceback.format_exc()}
        (out / "report.json").write_text(json.dumps({"row": row, **detail}, indent=2, default=float) + "\n")
        RunManifest.for_directory(out, _spec_dict(spec), {"cell": cell["seed"]},
                                  time.time() - t0).write(out)
        result.rows.append(row)
        if log:
            log(f"{row['task']}/{row['source']}/{row['selector']}/{row['perturbation']}/"
                f"seed{row['seed_index']}: {row['status']} "
                + (f"acc={row['token_accuracy']:.4f}" if row["status"] == "ok" else row.get("error", "")))
    write_aggregate(run_dir, result.rows)
    seeds = {str(i): cell_seed(cfg.master_seed, i) for i in range(cfg.n_seeds)}
    RunManifest.for_directory(run_dir, cfg.raw, seeds, time.time() - started).write(run_dir)
    return result


def _spec_dict(spec: CellSpec) -> dict:
    def plain(v):
        if hasattr(v, "to_dict"):
            return v.to_dict()
        if hasattr(v, "__dataclass_fields__"):
            return {k: plain(getattr(v, k)) for k in v.__dataclass_fields__}
        if isinstance(v, (list, tuple)):
            return [plain(x) for x in v]
        if isinstance(v, dict):
            return {k: plain(x) for k, x in v.items()}
        return v
    return plain(spec)
