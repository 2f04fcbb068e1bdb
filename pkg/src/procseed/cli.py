"""``procseed`` command line.

Exit codes: 0 success, 2 configuration error, 3 numerical divergence,
4 partial matrix failure.
"""
from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import datagen
from .config import ConfigError, load_toml, model_config, plan_config
from .evaluation import entropy_csv, entropy_table, evaluate
from .manifest import RunManifest
from .matrix import RunDirExistsError, aggregate_csv, collect_rows, run_matrix, write_aggregate
from .model import CheckpointError, PRESETS, init_params, load, save
from .sources import make_source
from .tasks import TASK_KINDS, TaskConfig, TaskConfigError, generate_task
from .training import (
    CurriculumSchedule, DivergenceError, pretrain_preset, preset, run_plan, train,
)
from .transfer import (
    NoiseSpec, TransferError, TransferSelector, add_noise, apply_selector, assemble, shuffle_weights,
)

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_PARTIAL = 0, 2, 3, 4
EMBED_ALIASES = {"mean": "mean_vector", "mean_vector": "mean_vector", "random": "random", "keep": "keep"}


def _write_json(path, obj):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, default=float) + "\n")


def _run_dir(path, force: bool) -> Path:
    out = Path(path)
    if out.exists() and any(out.iterdir()) and not force:
        raise RunDirExistsError(f"{out} exists; pass --force to overwrite")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _heads(text):
    if not text:
        return []
    try:
        return [tuple(int(x) for x in h.split(":")) for h in text.split(",")]
    except ValueError as e:
        raise ConfigError(f"heads must look like 0:1,1:3, got {text!r}") from e


def cmd_gen(a):
    cfg = datagen.GenConfig(a.kind, input_length=a.length, k=a.k, p_open=a.p_open, seed=a.seed,
                            min_length=a.min_length)
    rng = np.random.default_rng(a.seed)
    if a.kind == "eca110":
        rows = np.stack([datagen.gen_eca_sequence(cfg, rng) for _ in range(a.n)])
        np.save(a.out, rows)
        print(f"wrote {a.n} trajectories {rows.shape[1:]} to {a.out}")
        return EXIT_OK

    def samples():
        for _ in range(a.n):
            s = datagen.generate(cfg, rng)
            yield datagen.shuffle_sample(s, rng) if a.shuffle else s

    header = {"kind": a.kind, "config": cfg.to_dict(), "shuffled": a.shuffle, "n": a.n}
    total = datagen.write_dataset(a.out, samples(), header)
    print(f"wrote {a.n} samples, {total} tokens to {a.out}")
    return EXIT_OK


def cmd_gen_task(a):
    kw = {k: v for k, v in (("k_pairs", a.k_pairs), ("n_digits", a.n_digits), ("n_items", a.n_items))
          if v is not None}
    cfg = TaskConfig(a.task, seed=a.seed, **kw)
    rng = np.random.default_rng(a.seed)
    header = {"kind": a.task, "config": cfg.to_dict(), "n": a.n}
    total = datagen.write_dataset(a.out, (generate_task(cfg, rng) for _ in range(a.n)), header)
    print(f"wrote {a.n} samples, {total} tokens to {a.out}")
    return EXIT_OK


def _metrics_file(path):
    if path is None:
        return None
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    return open(path, "w")


def cmd_pretrain(a):
    kw = {"input_length": a.length} if a.length else {}
    if a.min_length:
        kw["min_length"] = a.min_length
    if a.k and a.kind in ("dyck", "dyck_shuffle"):
        kw["k"] = a.k
    src = make_source(a.kind, seed=a.seed, **kw)
    over = {k: v for k, v in (("max_steps", a.steps), ("lr", a.lr), ("batch_size", a.batch),
                              ("max_tokens", a.max_tokens), ("target_accuracy", a.target_accuracy))
            if v is not None}
    cfg = pretrain_preset(a.kind, seed=a.seed, **over)
    mcfg = PRESETS[a.model]
    mcfg = (mcfg.replace(io_variant="binary", vocab_size=src.cfg.eca_width) if src.binary
            else mcfg.replace(vocab_size=src.vocab.size))
    cur = CurriculumSchedule.for_kind(a.kind) if a.curriculum else None
    with (_metrics_file(a.metrics) or open(Path(a.out).with_suffix(".metrics.jsonl"), "w")) as log:
        res = train(init_params(mcfg, a.seed), src, cfg, curriculum=cur, phase="procedural", log=log)
    res.params.provenance = {**res.params.provenance, "name": a.name or a.kind, "kind": a.kind}
    save(res.params, a.out)
    print(f"{a.kind}: {res.steps} steps, {res.tokens_seen} tokens, best val loss {res.best_loss:.4f} "
          f"at step {res.best_step} ({res.stopped}); saved {a.out}")
    return EXIT_OK


def cmd_train(a):
    out = _run_dir(a.out, a.force)
    t0 = time.time()
    if a.config:
        plan = plan_config(a.config)
        report = run_plan(plan)
        _write_json(out / "report.json", report.to_dict())
        print(json.dumps(report.to_dict(), default=float))
        RunManifest.for_directory(out, load_toml(a.config), {"seeds": list(plan.seeds)},
                                  time.time() - t0).write(out)
        return EXIT_OK
    if not a.task:
        raise ConfigError("train needs --config or --task")
    src = make_source(a.task, seed=a.seed)
    mcfg = model_config({"preset": a.model}).replace(vocab_size=src.vocab.size)
    if a.init:
        sel = TransferSelector(a.mode, heads=_heads(a.heads), embedding_init=EMBED_ALIASES[a.embed])
        p = apply_selector(load(a.init), mcfg, sel, 10_000 + a.seed)
    else:
        p = init_params(mcfg, 10_000 + a.seed)
    over = {k: v for k, v in (("max_steps", a.steps), ("lr", a.lr), ("batch_size", a.batch))
            if v is not None}
    cfg = preset(a.scale, seed=a.seed, **over)
    with open(out / "metrics.jsonl", "w") as log:
        res = train(p, src, cfg, phase="target", log=log)
    save(res.params, out / "model.ckpt")
    rep = evaluate(res.params, src.reseeded(a.seed + 2_000_003), a.n_eval)
    _write_json(out / "report.json", rep.to_dict())
    print(f"{a.task}: token accuracy {rep.token_accuracy:.4f}, perplexity {rep.perplexity:.4f}")
    RunManifest.for_directory(out, {"task": a.task, "train": cfg.to_dict(), "init": a.init},
                              {"seed": a.seed}, time.time() - t0).write(out)
    return EXIT_OK


def cmd_transfer(a):
    src = load(a.src)
    cfg = src.config
    if a.task:
        cfg = cfg.replace(vocab_size=make_source(a.task).vocab.size, io_variant="token")
    elif a.vocab:
        cfg = cfg.replace(vocab_size=a.vocab)
    sel = TransferSelector(a.mode, heads=_heads(a.heads), embedding_init=EMBED_ALIASES[a.embed])
    save(apply_selector(src, cfg, sel, a.seed), a.out)
    print(f"wrote {a.mode} transfer of {a.src} to {a.out}")
    return EXIT_OK


def cmd_assemble(a):
    attn, mlp = load(a.attn), load(a.mlp)
    base = attn.config if not a.vocab else attn.config.replace(vocab_size=a.vocab)
    out = assemble([(attn, {"attention"}), (mlp, {"mlp"})], base, a.seed,
                   embedding_init=EMBED_ALIASES[a.embed])
    save(out, a.out)
    print(f"assembled attention from {a.attn} and MLPs from {a.mlp} into {a.out}")
    return EXIT_OK


def cmd_perturb(a):
    p = load(a.ckpt)
    if a.shuffle:
        out = shuffle_weights(p, a.seed)
    else:
        out = add_noise(p, NoiseSpec(a.noise, a.seed))
    save(out, a.out)
    print(f"wrote perturbed checkpoint to {a.out}")
    return EXIT_OK


def cmd_eval(a):
    p = load(a.ckpt)
    src = make_source(a.task, seed=a.seed)
    if not src.binary and p.config.vocab_size != src.vocab.size:
        raise ConfigError(f"checkpoint vocabulary {p.config.vocab_size} does not match "
                          f"{a.task} vocabulary {src.vocab.size}")
    rep = evaluate(p, src, a.n, with_entropy=a.entropy_csv is not None)
    if a.entropy_csv:
        Path(a.entropy_csv).write_text(entropy_csv(entropy_table(p, src.reseeded(a.seed), a.entropy_examples)))
    if a.json:
        _write_json(a.json, rep.to_dict())
    print(f"{a.task}: token accuracy {rep.token_accuracy:.4f}, sequence accuracy "
          f"{rep.sequence_accuracy:.4f}, perplexity {rep.perplexity:.4f} over {rep.n_samples} samples")
    return EXIT_OK


def cmd_matrix(a):
    res = run_matrix(a.config, a.out, force=a.force)
    print(f"{len(res.rows)} cells, {len(res.failures)} failed; aggregate in {Path(a.out) / 'aggregate.csv'}")
    return EXIT_PARTIAL if res.failures else EXIT_OK


def cmd_report(a):
    rows = collect_rows(a.run)
    if not rows:
        raise ConfigError(f"no cell reports under {a.run}")
    table = write_aggregate(a.run, rows)
    sys.stdout.write(aggregate_csv(table))
    if a.verify:
        bad = RunManifest.read(a.run).verify(a.run)
        for b in bad:
            print(f"hash mismatch: {b}", file=sys.stderr)
        return EXIT_CONFIG if bad else EXIT_OK
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="procseed", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="write procedural samples to a .pds file")
    g.add_argument("--kind", required=True, choices=datagen.KINDS)
    g.add_argument("--n", type=int, default=1000)
    g.add_argument("--length", type=int, default=8)
    g.add_argument("--min-length", type=int)
    g.add_argument("--k", type=int, default=4)
    g.add_argument("--p-open", type=float)
    g.add_argument("--shuffle", action="store_true")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(fn=cmd_gen)

    g = sub.add_parser("gen-task", help="write algorithmic task samples to a .pds file")
    g.add_argument("--task", required=True, choices=TASK_KINDS)
    g.add_argument("--n", type=int, default=1000)
    g.add_argument("--k-pairs", type=int)
    g.add_argument("--n-digits", type=int)
    g.add_argument("--n-items", type=int)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(fn=cmd_gen_task)

    g = sub.add_parser("pretrain", help="train a model on procedural data")
    g.add_argument("--kind", required=True, choices=datagen.KINDS)
    g.add_argument("--model", default="tiny", choices=sorted(PRESETS))
    g.add_argument("--length", type=int)
    g.add_argument("--min-length", type=int)
    g.add_argument("--k", type=int)
    g.add_argument("--curriculum", action="store_true")
    g.add_argument("--steps", type=int)
    g.add_argument("--max-tokens", type=int)
    g.add_argument("--target-accuracy", type=float)
    g.add_argument("--lr", type=float)
    g.add_argument("--batch", type=int)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--name")
    g.add_argument("--metrics")
    g.add_argument("--out", required=True)
    g.set_defaults(fn=cmd_pretrain)

    g = sub.add_parser("train", help="run an experiment plan or fine-tune on a task")
    g.add_argument("--config")
    g.add_argument("--task", choices=TASK_KINDS)
    g.add_argument("--init")
    g.add_argument("--mode", default="full", choices=("full", "attention_only", "mlp_only", "heads"))
    g.add_argument("--heads")
    g.add_argument("--embed", default="keep", choices=sorted(EMBED_ALIASES))
    g.add_argument("--model", default="tiny", choices=sorted(PRESETS))
    g.add_argument("--scale", default="reduced", choices=("reduced", "algorithmic", "multiplication"))
    g.add_argument("--steps", type=int)
    g.add_argument("--lr", type=float)
    g.add_argument("--batch", type=int)
    g.add_argument("--n-eval", type=int, default=1000)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--force", action="store_true")
    g.add_argument("--out", required=True)
    g.set_defaults(fn=cmd_train)

    g = sub.add_parser("transfer", help="initialize a model from selected components")
    g.add_argument("--src", required=True)
    g.add_argument("--mode", required=True, choices=("full", "attention_only", "mlp_only", "heads"))
    g.add_argument("--heads")
    g.add_argument("--embed", default="keep", choices=sorted(EMBED_ALIASES))
    g.add_argument("--task", choices=TASK_KINDS)
    g.add_argument("--vocab", type=int)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(fn=cmd_transfer)

    g = sub.add_parser("assemble", help="combine attention and MLP components of two checkpoints")
    g.add_argument("--attn", required=True)
    g.add_argument("--mlp", required=True)
    g.add_argument("--embed", default="random", choices=sorted(EMBED_ALIASES))
    g.add_argument("--vocab", type=int)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(fn=cmd_assemble)

    g = sub.add_parser("perturb", help="shuffle or add Gaussian noise to a checkpoint")
    g.add_argument("--ckpt", required=True)
    how = g.add_mutually_exclusive_group(required=True)
    how.add_argument("--shuffle", action="store_true")
    how.add_argument("--noise", type=float)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(fn=cmd_perturb)

    g = sub.add_parser("eval", help="evaluate a checkpoint on a task")
    g.add_argument("--ckpt", required=True)
    g.add_argument("--task", required=True)
    g.add_argument("--n", type=int, default=1000)
    g.add_argument("--seed", type=int, default=12345)
    g.add_argument("--json")
    g.add_argument("--entropy-csv")
    g.add_argument("--entropy-examples", type=int, default=100)
    g.set_defaults(fn=cmd_eval)

    g = sub.add_parser("matrix", help="run a TOML-configured experiment matrix")
    g.add_argument("--config", required=True)
    g.add_argument("--out", required=True)
    g.add_argument("--force", action="store_true")
    g.set_defaults(fn=cmd_matrix)

    g = sub.add_parser("report", help="aggregate cell reports of a run directory")
    g.add_argument("--run", required=True)
    g.add_argument("--verify", action="store_true", help="check the manifest hashes")
    g.set_defaults(fn=cmd_report)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        a = ap.parse_args(argv)
    except SystemExit as e:
        return EXIT_CONFIG if e.code else EXIT_OK
    try:
        return a.fn(a)
    except DivergenceError as e:
        print(f"procseed: diverged: {e}", file=sys.stderr)
        return EXIT_DIVERGED
    except (ConfigError, RunDirExistsError, TransferError, CheckpointError, TaskConfigError,
            datagen.GenConfigError, datagen.DegenerateInputError, ValueError, FileNotFoundError) as e:
        print(f"procseed: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
