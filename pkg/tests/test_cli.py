import json
import subprocess
import sys
from pathlib import Path

import pytest

from iif.report import load_report, stable_view

CLI = [sys.executable, "-m", "iif.cli"]


def run(args, env=None, cwd=None):
    import os

    full_env = dict(os.environ)
    if env:
        full_env.update(env)
    return subprocess.run(
        CLI + args, capture_output=True, text=True, env=full_env, cwd=cwd
    )


def chain(workdir: Path, n=80, n_val=20, d=4, seed=7, threads=None):
    """gen-synth -> flip -> train-logreg -> grads x2 -> score -> select -> detect -> eval"""
    env = {"IIF_THREADS": str(threads)} if threads else None
    d_ = str(workdir)
    steps = [
        ["gen-synth", "--n", str(n), "--n-val", str(n_val), "--d", str(d),
         "--sep", "2.0", "--seed", str(seed), "--out", d_],
        ["flip", "--data", f"{d_}/train.jsonl", "--rho", "0.2", "--seed", str(seed),
         "--out-data", f"{d_}/train_noisy.jsonl", "--out-ledger", f"{d_}/ledger.json"],
        ["train-logreg", "--data", f"{d_}/train_noisy.jsonl",
         "--features", f"{d_}/train_features.iif", "--mu", "1e-3", "--out", f"{d_}/model.json"],
        ["grads", "--model", f"{d_}/model.json", "--data", f"{d_}/train_noisy.jsonl",
         "--features", f"{d_}/train_features.iif", "--role", "train",
         "--manifest", f"{d_}/manifest.json", "--out", f"{d_}/train_grads.iif"],
        ["grads", "--model", f"{d_}/model.json", "--data", f"{d_}/validation.jsonl",
         "--features", f"{d_}/validation_features.iif", "--role", "validation",
         "--manifest", f"{d_}/manifest.json", "--out", f"{d_}/val_grads.iif"],
        ["score", "--method", "datainf", "--train-grads", f"{d_}/train_grads.iif",
         "--val-grads", f"{d_}/val_grads.iif", "--out", f"{d_}/scores.json"],
        ["select", "--strategy", "average", "--sim", "cosine", "--k", "3",
         "--alpha", "0.5", "--method", "datainf",
         "--pool", f"{d_}/train_noisy.jsonl", "--queries", f"{d_}/validation.jsonl",
         "--pool-emb", f"{d_}/train_features.iif", "--query-emb", f"{d_}/validation_features.iif",
         "--train-grads", f"{d_}/train_grads.iif", "--val-grads", f"{d_}/val_grads.iif",
         "--prompts-dir", f"{d_}/prompts", "--out", f"{d_}/selections.json"],
        ["detect", "--scores", f"{d_}/scores.json", "--ledger", f"{d_}/ledger.json",
         "--m", "16", "--out", f"{d_}/detection.json"],
        ["eval", "--selections", f"{d_}/selections.json",
         "--queries", f"{d_}/validation.jsonl", "--pool", f"{d_}/train_noisy.jsonl",
         "--out", f"{d_}/eval.json"],
        ["verify", "--dir", d_],
    ]
    for step in steps:
        proc = run(step, env=env)
        assert proc.returncode == 0, f"{step[0]} failed: {proc.stderr}"
    return workdir


OUTPUTS = [
    "train.jsonl", "validation.jsonl", "train_features.iif", "validation_features.iif",
    "manifest.json", "train_noisy.jsonl", "ledger.json", "model.json",
    "train_grads.iif", "val_grads.iif", "scores.json", "selections.json",
    "detection.json", "eval.json",
]
REPORT_OUTPUTS = {"scores.json", "selections.json", "detection.json", "eval.json"}


def snapshot(workdir: Path) -> dict:
    out = {}
    for name in OUTPUTS:
        path = workdir / name
        if name in REPORT_OUTPUTS:
            out[name] = stable_view(load_report(path)).encode()
        else:
            out[name] = path.read_bytes()
    for prompt in sorted((workdir / "prompts").glob("*.txt")):
        out[f"prompts/{prompt.name}"] = prompt.read_bytes()
    return out


class TestUsageErrors:
    def test_unknown_subcommand(self):
        assert run(["frobnicate"]).returncode == 2

    def test_unknown_method(self, tmp_path):
        proc = run(["score", "--method", "warp", "--train-grads", "x", "--val-grads", "y",
                    "--out", str(tmp_path / "o.json")])
        assert proc.returncode == 2

    def test_unknown_flag(self):
        assert run(["gen-synth", "--bogus", "1"]).returncode == 2

    def test_missing_required(self):
        assert run(["flip"]).returncode == 2


class TestGenSynth:
    def test_files_present(self, tmp_path):
        proc = run(["gen-synth", "--n", "10", "--n-val", "4", "--d", "3",
                    "--sep", "2.0", "--seed", "7", "--out", str(tmp_path)])
        assert proc.returncode == 0
        for name in ["train.jsonl", "validation.jsonl", "train_features.iif",
                     "validation_features.iif", "manifest.json"]:
            assert (tmp_path / name).exists()


class TestRuntimeErrors:
    def test_missing_input_file(self, tmp_path):
        proc = run(["flip", "--data", str(tmp_path / "nope.jsonl"), "--rho", "0.2",
                    "--seed", "1", "--out-data", str(tmp_path / "a"),
                    "--out-ledger", str(tmp_path / "b")])
        assert proc.returncode == 1
        assert "error" in proc.stderr

    def test_per_query_without_query_id(self, tmp_path):
        chainless = tmp_path / "w"
        chainless.mkdir()
        chain(chainless, n=10, n_val=4, d=2)
        proc = run(["score", "--method", "tracin", "--mode", "per-query",
                    "--train-grads", str(chainless / "train_grads.iif"),
                    "--val-grads", str(chainless / "val_grads.iif"),
                    "--out", str(tmp_path / "o.json")])
        assert proc.returncode == 1


class TestFullChain:
    def test_smoke_detection_report(self, tmp_path):
        chain(tmp_path, n=60, n_val=12, d=3)
        report = load_report(tmp_path / "detection.json")
        det = report["metrics"]["detection"]
        assert det["m"] == 16
        assert 0.0 <= det["precision_at_m"] <= 1.0
        assert det["ledger_size"] == 12
        sel = load_report(tmp_path / "selections.json")
        assert len(sel["selections"]) == 12
        prompts = list((tmp_path / "prompts").glob("*.txt"))
        assert len(prompts) == 12
        text = prompts[0].read_text()
        assert text.count("###") == 3

    def test_chain_on_defaults_matches_oracle_expectations(self, tmp_path):
        # every command at its default flags (n=500, d=20, seed 7, m=100);
        # the flip ledger is ground truth for the detection report
        d_ = str(tmp_path)
        steps = [
            ["gen-synth", "--out", d_],
            ["flip", "--data", f"{d_}/train.jsonl",
             "--out-data", f"{d_}/train_noisy.jsonl", "--out-ledger", f"{d_}/ledger.json"],
            ["train-logreg", "--data", f"{d_}/train_noisy.jsonl",
             "--features", f"{d_}/train_features.iif", "--out", f"{d_}/model.json"],
            ["grads", "--model", f"{d_}/model.json", "--data", f"{d_}/train_noisy.jsonl",
             "--features", f"{d_}/train_features.iif", "--role", "train",
             "--out", f"{d_}/train_grads.iif"],
            ["grads", "--model", f"{d_}/model.json", "--data", f"{d_}/validation.jsonl",
             "--features", f"{d_}/validation_features.iif", "--role", "validation",
             "--out", f"{d_}/val_grads.iif"],
            ["score", "--train-grads", f"{d_}/train_grads.iif",
             "--val-grads", f"{d_}/val_grads.iif", "--out", f"{d_}/scores.json"],
            ["detect", "--scores", f"{d_}/scores.json", "--ledger", f"{d_}/ledger.json",
             "--out", f"{d_}/detection.json"],
        ]
        for step in steps:
            proc = run(step)
            assert proc.returncode == 0, f"{step[0]} failed: {proc.stderr}"
        det = load_report(tmp_path / "detection.json")["metrics"]["detection"]
        assert det["m"] == 100 and det["ledger_size"] == 100
        assert det["precision_at_m"] >= 0.8

    def test_verify_fails_on_corruption(self, tmp_path):
        chain(tmp_path, n=20, n_val=4, d=2)
        grads = tmp_path / "train_grads.iif"
        data = bytearray(grads.read_bytes())
        data[0:4] = b"XXXX"
        grads.write_bytes(bytes(data))
        proc = run(["verify", "--dir", str(tmp_path)])
        assert proc.returncode == 1

    def test_idempotent_rerun(self, tmp_path):
        work = tmp_path / "w"
        work.mkdir()
        chain(work, n=40, n_val=8, d=3, seed=11)
        snap_a = snapshot(work)
        chain(work, n=40, n_val=8, d=3, seed=11)
        snap_b = snapshot(work)
        assert snap_a.keys() == snap_b.keys()
        for name in snap_a:
            assert snap_a[name] == snap_b[name], f"{name} differs between reruns"

    def test_thread_count_does_not_change_outputs(self, tmp_path):
        import shutil

        work = tmp_path / "w"
        work.mkdir()
        chain(work, n=40, n_val=8, d=3, seed=11, threads=1)
        snap_1 = snapshot(work)
        shutil.rmtree(work)
        work.mkdir()
        chain(work, n=40, n_val=8, d=3, seed=11, threads=8)
        snap_8 = snapshot(work)
        for name in snap_1:
            assert snap_1[name] == snap_8[name], f"{name} differs across IIF_THREADS"


@pytest.fixture(scope="module")
def artifacts(tmp_path_factory):
    work = tmp_path_factory.mktemp("chain")
    chain(work, n=40, n_val=6, d=3)
    return work


class TestSelectStrategies:

    @pytest.mark.parametrize("strategy", ["two-stage", "prune", "similarity", "random"])
    def test_each_strategy_runs(self, artifacts, tmp_path, strategy):
        d_ = str(artifacts)
        args = ["select", "--strategy", strategy, "--sim", "cosine", "--k", "2",
                "--pool", f"{d_}/train_noisy.jsonl", "--queries", f"{d_}/validation.jsonl",
                "--pool-emb", f"{d_}/train_features.iif",
                "--query-emb", f"{d_}/validation_features.iif",
                "--out", str(tmp_path / "sel.json")]
        if strategy in ("two-stage", "prune"):
            args += ["--method", "datainf", "--train-grads", f"{d_}/train_grads.iif",
                     "--val-grads", f"{d_}/val_grads.iif"]
        proc = run(args)
        assert proc.returncode == 0, proc.stderr
        report = load_report(tmp_path / "sel.json")
        assert all(len(s["ids"]) == 2 for s in report["selections"].values())

    def test_bm25_needs_no_embeddings(self, artifacts, tmp_path):
        d_ = str(artifacts)
        proc = run(["select", "--strategy", "similarity", "--sim", "bm25", "--k", "2",
                    "--pool", f"{d_}/train_noisy.jsonl", "--queries", f"{d_}/validation.jsonl",
                    "--out", str(tmp_path / "sel.json")])
        assert proc.returncode == 0, proc.stderr

    def test_detect_rerun_from_config_echo(self, artifacts, tmp_path):
        # a report is self-contained: its config echo names everything
        # needed to reproduce its metrics exactly
        d_ = str(artifacts)
        first = tmp_path / "det1.json"
        assert run(["detect", "--scores", f"{d_}/scores.json",
                    "--ledger", f"{d_}/ledger.json", "--m", "9",
                    "--out", str(first)]).returncode == 0
        echo = load_report(first)["config"]
        second = tmp_path / "det2.json"
        assert run(["detect", "--scores", echo["scores"], "--ledger", echo["ledger"],
                    "--m", str(echo["m"]), "--out", str(second)]).returncode == 0
        assert load_report(first)["metrics"] == load_report(second)["metrics"]

    def test_eval_csv_flattening(self, artifacts, tmp_path):
        d_ = str(artifacts)
        csv_path = tmp_path / "metrics.csv"
        proc = run(["eval", "--selections", f"{d_}/selections.json",
                    "--queries", f"{d_}/validation.jsonl",
                    "--pool", f"{d_}/train_noisy.jsonl",
                    "--csv", str(csv_path), "--out", str(tmp_path / "e.json")])
        assert proc.returncode == 0, proc.stderr
        lines = csv_path.read_text().strip().splitlines()
        assert lines[0] == "metric,value"
        assert any(line.startswith("task_match_rate,") for line in lines[1:])

    def test_overlap_eval(self, artifacts, tmp_path):
        d_ = str(artifacts)
        for name, strat in (("s1.json", "similarity"), ("s2.json", "random")):
            args = ["select", "--strategy", strat, "--sim", "cosine", "--k", "2",
                    "--pool", f"{d_}/train_noisy.jsonl", "--queries", f"{d_}/validation.jsonl",
                    "--pool-emb", f"{d_}/train_features.iif",
                    "--query-emb", f"{d_}/validation_features.iif",
                    "--out", str(tmp_path / name)]
            assert run(args).returncode == 0
        proc = run(["eval", "--selections", str(tmp_path / "s1.json"),
                    "--selections-b", str(tmp_path / "s2.json"),
                    "--out", str(tmp_path / "overlap.json")])
        assert proc.returncode == 0
        report = load_report(tmp_path / "overlap.json")
        assert 0.0 <= report["metrics"]["overlap"]["mean"] <= 1.0
