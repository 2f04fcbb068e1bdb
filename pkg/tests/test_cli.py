import json
import subprocess
import sys

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

import numpy as np
import pytest

from procseed.cli import main
from procseed.datagen import read_dataset
from procseed.matrix import aggregate, cell_seed, load_matrix_config, run_matrix
from procseed.config import ConfigError, plan_config
from procseed.manifest import RunManifest
from procseed.model import load
from procseed.training import CellSpec, TrainConfig, run_cell, run_plan

MATRIX = """
name = "t"
master_seed = 3
n_seeds = 2
sources = ["set", "stack"]
selectors = ["attention_only", "full"]
tasks = ["sorting"]
baseline = false
eval_samples = 16

[model]
n_layers = 1
n_heads = 2
d_model = 8

[pretrain]
max_steps = 2
batch_size = 4
val_size = 4

[finetune]
max_steps = 2
batch_size = 4
val_size = 4

[selector]
embedding_init = "mean_vector"
"""


def test_gen_and_gen_task_write_readable_datasets(tmp_path):
    out = tmp_path / "s.pds"
    assert main(["gen", "--kind", "union", "--n", "20", "--length", "6", "--out", str(out)]) == 0
    header, it = read_dataset(out)
    samples = list(it)
    assert header["kind"] == "union" and len(samples) == 20
    out = tmp_path / "h.pds"
    assert main(["gen-task", "--task", "haystack", "--n", "5", "--out", str(out)]) == 0
    assert all(len(s.tokens) == 62 for s in read_dataset(out)[1])


def test_checkpoint_pipeline(tmp_path):
    p = lambda n: str(tmp_path / n)
    assert main(["pretrain", "--kind", "set", "--steps", "2", "--batch", "4", "--out", p("set.ckpt")]) == 0
    assert main(["pretrain", "--kind", "eca110", "--steps", "1", "--batch", "2", "--out", p("eca.ckpt")]) == 0
    assert main(["assemble", "--attn", p("set.ckpt"), "--mlp", p("eca.ckpt"), "--out", p("mix.ckpt")]) == 0
    mix, s, e = load(p("mix.ckpt")), load(p("set.ckpt")), load(p("eca.ckpt"))
    assert all(np.array_equal(mix[k], s[k]) for k in mix.names("attention"))
    assert all(np.array_equal(mix[k], e[k]) for k in mix.names("mlp"))
    assert main(["transfer", "--src", p("set.ckpt"), "--mode", "attention_only", "--embed", "mean",
                 "--task", "haystack", "--out", p("t.ckpt")]) == 0
    t = load(p("t.ckpt"))
    assert np.allclose(t["wte"], t["wte"][0])
    assert main(["perturb", "--ckpt", p("t.ckpt"), "--shuffle", "--out", p("sh.ckpt")]) == 0
    assert main(["perturb", "--ckpt", p("t.ckpt"), "--noise", "0.1", "--out", p("nz.ckpt")]) == 0
    assert main(["eval", "--ckpt", p("nz.ckpt"), "--task", "haystack", "--n", "20",
                 "--json", p("r.json"), "--entropy-csv", p("e.csv")]) == 0
    rep = json.loads((tmp_path / "r.json").read_text())
    assert 0 <= rep["token_accuracy"] <= 1 and rep["n_samples"] == 20
    assert (tmp_path / "e.csv").read_text().splitlines()[0] == "layer,head,entropy"
    assert len((tmp_path / "e.csv").read_text().splitlines()) == 1 + 8


def test_train_direct_and_refuses_existing_dir(tmp_path):
    out = str(tmp_path / "run")
    args = ["train", "--task", "sorting", "--steps", "2", "--batch", "4", "--n-eval", "8", "--out", out]
    assert main(args) == 0
    assert {"metrics.jsonl", "model.ckpt", "report.json", "manifest.json"} <= {
        f.name for f in (tmp_path / "run").iterdir()}
    assert main(args) == 2
    assert main(args + ["--force"]) == 0


def test_train_with_plan_config(tmp_path):
    cfg = tmp_path / "plan.toml"
    cfg.write_text("""
target = "sorting"
procedural = "identity"
t1 = 500
t2 = 400
seeds = [0, 1, 2]
eval_samples = 8
[model]
n_layers = 1
n_heads = 2
d_model = 8
[pretrain]
batch_size = 4
val_size = 4
eval_interval = 50
[finetune]
batch_size = 4
val_size = 4
eval_interval = 50
""")
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "r")]) == 0
    rep = json.loads((tmp_path / "r" / "report.json").read_text())
    assert len(rep["baseline"]["values"]) == 3 and rep["setting"] == "additive"


def test_exit_codes_for_config_errors(tmp_path):
    assert main(["gen", "--kind", "dyck", "--length", "7", "--out", str(tmp_path / "d")]) == 2
    assert main(["nonsense"]) == 2
    bad = tmp_path / "bad.toml"
    bad.write_text("tasks = [\"sorting\"]\nunknown_key = 1\n")
    assert main(["matrix", "--config", str(bad), "--out", str(tmp_path / "m")]) == 2
    bad.write_text("this is = = not toml")
    assert main(["matrix", "--config", str(bad), "--out", str(tmp_path / "m")]) == 2
    assert main(["eval", "--ckpt", str(tmp_path / "missing.ckpt"), "--task", "sorting"]) == 2


def test_divergence_exit_code(tmp_path, monkeypatch):
    from procseed import cli
    from procseed.training import DivergenceError

    def boom(*a, **k):
        raise DivergenceError("nan", last_good=None)
    monkeypatch.setattr(cli, "train", boom)
    assert main(["pretrain", "--kind", "set", "--steps", "1", "--out", str(tmp_path / "x.ckpt")]) == 3


def test_matrix_cells_manifests_and_aggregate(tmp_path):
    cfg = tmp_path / "m.toml"
    cfg.write_text(MATRIX)
    assert main(["matrix", "--config", str(cfg), "--out", str(tmp_path / "run")]) == 0
    manifests = list((tmp_path / "run" / "cells").rglob("manifest.json"))
    assert len(manifests) == 2 * 2 * 2
    assert len(list((tmp_path / "run" / "pretrained").rglob("model.ckpt"))) == 2 * 2
    csv_lines = (tmp_path / "run" / "aggregate.csv").read_text().splitlines()
    assert len(csv_lines) == 1 + 4
    top = RunManifest.read(tmp_path / "run")
    assert top.verify(tmp_path / "run") == []
    assert main(["report", "--run", str(tmp_path / "run"), "--verify"]) == 0
    assert main(["matrix", "--config", str(cfg), "--out", str(tmp_path / "run")]) == 2


def test_matrix_rerun_reproduces_metrics_bit_exactly(tmp_path):
    run_matrix(MATRIX_DICT(), tmp_path / "a", log=None)
    run_matrix(MATRIX_DICT(), tmp_path / "b", log=None)
    for f in (tmp_path / "a" / "cells").rglob("metrics.jsonl"):
        twin = tmp_path / "b" / f.relative_to(tmp_path / "a")
        assert f.read_bytes() == twin.read_bytes()


def MATRIX_DICT():
    return tomllib.loads(MATRIX)


def test_partial_failure_recorded_and_exit_code(tmp_path, monkeypatch):
    from procseed import matrix

    calls = {"n": 0}

    def flaky(spec, pre, log=None):
        calls["n"] += 1
        if calls["n"] == 2:
            raise RuntimeError("cell exploded")
        return run_cell(spec, pre, log=log)
    monkeypatch.setattr(matrix, "run_cell", flaky)
    cfg = tmp_path / "m.toml"
    cfg.write_text(MATRIX)
    assert main(["matrix", "--config", str(cfg), "--out", str(tmp_path / "run")]) == 4
    reports = [json.loads(p.read_text()) for p in (tmp_path / "run" / "cells").rglob("report.json")]
    statuses = sorted(r["row"]["status"] for r in reports)
    assert statuses.count("failed") == 1 and statuses.count("ok") == 7


def test_matrix_counting_and_seeds():
    d = MATRIX_DICT()
    cfg = load_matrix_config({**d, "n_seeds": 3})
    assert len(cfg.cells()) == 2 * 2 * 3
    cfg_b = load_matrix_config({**d, "n_seeds": 3, "baseline": True})
    assert len(cfg_b.cells()) == 2 * 2 * 3 + 3
    # cell seeds depend only on (master seed, seed index)
    assert {c["seed"] for c in cfg.cells()} == {cell_seed(3, i) for i in range(3)}
    assert cell_seed(3, 1) == load_matrix_config({**d, "sources": ["set"]}).cells()[1]["seed"]
    with pytest.raises(ConfigError):
        load_matrix_config({**d, "tasks": ["juggling"]})
    with pytest.raises(ConfigError):
        load_matrix_config({**d, "perturbations": ["noise:abc"]})


def test_aggregate_identical_values():
    rows = [{"status": "ok", "task": "t", "source": "s", "selector": "a", "perturbation": "none",
             "token_accuracy": 0.75, "perplexity": 2.0, "sequence_accuracy": 0.5} for _ in range(10)]
    (row,) = aggregate(rows)
    assert (row["token_accuracy_mean"], row["token_accuracy_sd"]) == (0.75, 0.0)
    assert row["n"] == 10


def test_single_cell_matrix_equals_run_plan(tmp_path):
    d = MATRIX_DICT()
    d.update(sources=["set"], selectors=["attention_only"], n_seeds=1)
    res = run_matrix(d, tmp_path / "m", log=None)
    seed = cell_seed(3, 0)
    plan = plan_config({"target": "sorting", "procedural": "set", "t1": 10**9, "t2": 10**9,
                        "seeds": [seed], "eval_samples": 16, "model": d["model"],
                        "pretrain": d["pretrain"], "finetune": d["finetune"],
                        "selector": {"mode": "attention_only", "embedding_init": "mean_vector"}})
    rep = run_plan(plan)
    assert rep.treatment.values == [res.rows[0]["token_accuracy"]]


def test_console_script_help():
    out = subprocess.run([sys.executable, "-m", "procseed.cli", "--help"], capture_output=True, text=True)
    assert out.returncode == 0
    for sub in ("gen", "gen-task", "pretrain", "train", "transfer", "assemble", "perturb", "eval",
                "matrix", "report"):
        assert sub in out.stdout
