import csv
import json
import os
import subprocess
import sys

import pytest

from intrarank.cli import main


def run(*args, cwd=None, env=None):
    full_env = dict(os.environ, **(env or {}))
    return subprocess.run([sys.executable, "-m", "intrarank", *args], capture_output=True, text=True, cwd=cwd, env=full_env)


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    out = tmp_path_factory.mktemp("run") / "default"
    proc = run("train", "--out", str(out))
    assert proc.returncode == 0, proc.stderr
    return out


class TestTrain:
    def test_default_run_directory(self, trained):
        rows = read_csv(trained / "metrics.csv")
        assert len(rows) >= 40
        assert list(rows[0]) == ["epoch", "metric_loss", "ranking_loss", "combined", "families_per_batch_mean"]
        assert float(rows[0]["ranking_loss"]) > 0
        for name in ("config.json", "checkpoint.npz", "eval.json"):
            assert (trained / name).exists()
        cfg = json.loads((trained / "config.json").read_text())
        assert cfg["hparams"]["lambda_mix"] == 0.1 and cfg["seed"] == 0

    def test_lambda_zero_column(self, tmp_path):
        assert main(["train", "--lambda", "0", "--epochs", "2", "--out", str(tmp_path / "r")]) == 0
        assert all(float(r["ranking_loss"]) == 0.0 for r in read_csv(tmp_path / "r" / "metrics.csv"))

    def test_same_seed_same_csv(self, tmp_path):
        for name in ("a", "b"):
            assert main(["train", "--epochs", "3", "--seed", "5", "--out", str(tmp_path / name)]) == 0
        assert (tmp_path / "a" / "metrics.csv").read_bytes() == (tmp_path / "b" / "metrics.csv").read_bytes()

    def test_config_file_and_flag_precedence(self, tmp_path):
        (tmp_path / "c.json").write_text(json.dumps({"epochs": 1, "tau": 16, "hidden": [32]}))
        assert main(["train", "--config", str(tmp_path / "c.json"), "--epochs", "2", "--out", str(tmp_path / "r")]) == 0
        cfg = json.loads((tmp_path / "r" / "config.json").read_text())
        assert cfg["hparams"]["epochs"] == 2 and cfg["hparams"]["tau"] == 16 and cfg["hidden"] == [32]

    def test_output_root_env(self, tmp_path):
        proc = run("train", "--epochs", "1", env={"INTRARANK_OUTPUT_ROOT": str(tmp_path / "root")})
        assert proc.returncode == 0, proc.stderr
        (run_dir,) = (tmp_path / "root").iterdir()
        assert run_dir.name.startswith("train-") and (run_dir / "metrics.csv").exists()


class TestExitCodes:
    def test_usage(self):
        assert run("frobnicate").returncode == 1
        assert run("train", "--epochs", "x").returncode == 1

    def test_config(self, tmp_path):
        assert main(["train", "--set", "tau=-1", "--out", str(tmp_path / "r")]) == 2
        assert main(["train", "--set", "bogus=1", "--out", str(tmp_path / "r")]) == 2
        assert main(["ablate", "--param", "beta", "--values", "1", "--out", str(tmp_path / "s")]) == 2

    def test_data(self, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text("id,label,f0\na,0,1\nb,0\n")
        assert main(["train", "--data", str(bad), "--out", str(tmp_path / "r")]) == 3
        assert main(["train", "--data", str(tmp_path / "missing.csv"), "--out", str(tmp_path / "r")]) == 3


class TestEval:
    def test_eval_report(self, trained, tmp_path):
        proc = run("eval", "--checkpoint", str(trained / "checkpoint.npz"), "--out", str(tmp_path / "e.json"),
                   "--hits-csv", str(tmp_path / "hits.csv"))
        assert proc.returncode == 0, proc.stderr
        rep = json.loads(proc.stdout)
        assert list(rep["recall_at"]) == ["1", "2", "4", "8"]
        assert json.loads((tmp_path / "e.json").read_text()) == rep
        assert len(read_csv(tmp_path / "hits.csv")) == rep["n_queries"]

    def test_trained_beats_untrained(self, trained, tmp_path):
        assert main(["train", "--epochs", "0", "--out", str(tmp_path / "u")]) == 0
        trained_r1 = json.loads((trained / "eval.json").read_text())["recall_at"]["1"]
        untrained_r1 = json.loads((tmp_path / "u" / "eval.json").read_text())["recall_at"]["1"]
        assert trained_r1 > untrained_r1


class TestGradcheck:
    def test_passes(self):
        proc = run("gradcheck", "--instances", "20")
        assert proc.returncode == 0, proc.stdout
        assert proc.stdout.count("PASS") == 5

    def test_failure_exit_code(self):
        assert main(["gradcheck", "--instances", "2", "--tol", "0"]) == 4


class TestSynth:
    def test_default_monotone(self, tmp_path):
        assert main(["synth", "--out", str(tmp_path / "f.csv")]) == 0
        rows = read_csv(tmp_path / "f.csv")
        assert rows and list(rows[0]) == ["anchor_id", "variant_index", "strength", "cosine_to_anchor"]
        fams = {}
        for r in rows:
            fams.setdefault(r["anchor_id"], []).append(float(r["cosine_to_anchor"]))
        assert all(all(a > b for a, b in zip(c, c[1:])) for c in fams.values())

    def test_alpha_zero(self, tmp_path):
        assert main(["synth", "--set", "alpha=0", "--out", str(tmp_path / "f.csv")]) == 0
        assert all(float(r["cosine_to_anchor"]) == 1.0 for r in read_csv(tmp_path / "f.csv"))

    def test_gamma_above_one(self, tmp_path):
        assert main(["synth", "--set", "gamma=1.01", "--out", str(tmp_path / "f.csv")]) == 0
        assert (tmp_path / "f.csv").read_text() == "anchor_id,variant_index,strength,cosine_to_anchor\n"

    def test_with_checkpoint(self, trained, tmp_path):
        assert main(["synth", "--checkpoint", str(trained / "checkpoint.npz"), "--out", str(tmp_path / "f.csv")]) == 0
        assert read_csv(tmp_path / "f.csv")


class TestAblate:
    def test_n_sweep_warns(self, tmp_path):
        assert main(["ablate", "--param", "n", "--values", "2,3", "--epochs", "1", "--out", str(tmp_path)]) == 0
        rows = read_csv(tmp_path / "sweep.csv")
        assert rows[0]["note"] == "skipped: n must be >= 3" and rows[0]["recall_at_1"] == ""
        assert rows[1]["note"] == "" and float(rows[1]["recall_at_1"]) > 0
        assert (tmp_path / "config.json").exists()

    def test_single_value_equals_train(self, tmp_path):
        assert main(["ablate", "--param", "lambda", "--values", "0.1", "--epochs", "2", "--out", str(tmp_path / "s")]) == 0
        assert main(["train", "--epochs", "2", "--out", str(tmp_path / "t")]) == 0
        sweep = read_csv(tmp_path / "s" / "sweep.csv")[0]
        ev = json.loads((tmp_path / "t" / "eval.json").read_text())
        assert float(sweep["recall_at_1"]) == ev["recall_at"]["1"]
        assert float(sweep["rho"]) == ev["rank_preservation_rho"]

    def test_parallel_matches_sequential(self, tmp_path):
        args = ["ablate", "--param", "tau", "--values", "16,64", "--epochs", "1"]
        assert main(args + ["--out", str(tmp_path / "a")]) == 0
        assert main(args + ["--jobs", "2", "--out", str(tmp_path / "b")]) == 0
        assert (tmp_path / "a" / "sweep.csv").read_text() == (tmp_path / "b" / "sweep.csv").read_text()
