import json

import numpy as np
import pytest

from otrlab.cli import main
from otrlab.datasets import generate_corpus, load_dataset
from otrlab.errors import EXIT_CONFIG, EXIT_DATA
from otrlab.tracking import EnvConfig


def run_cli(*argv):
    return main([str(a) for a in argv])


class TestExitCodes:
    def test_missing_config_and_out(self):
        assert run_cli("run") == EXIT_CONFIG

    def test_bad_config_file(self, tmp_path):
        bad = tmp_path / "spec.json"
        bad.write_text("{not json")
        assert run_cli("run", "--config", bad) == EXIT_CONFIG

    def test_missing_dataset(self, tmp_path):
        assert run_cli("inspect", tmp_path / "nope") == EXIT_DATA

    def test_label_without_gen(self, tmp_path):
        assert run_cli("label", "--experts", tmp_path / "e",
                       "--unlabeled", tmp_path / "u",
                       "--out", tmp_path / "l") == EXIT_DATA


class TestDataCommands:
    def test_gen_strip_inspect(self, tmp_path, capsys):
        assert run_cli("gen", "--out", tmp_path, "--experts", 2,
                       "--unlabeled", 3, "--horizon", 30, "--seed", 7) == 0
        out = capsys.readouterr().out
        assert "expert" in out and "unlabeled" in out
        assert run_cli("strip", tmp_path / "expert",
                       "--out", tmp_path / "expert_stripped") == 0
        stripped = load_dataset(tmp_path / "expert_stripped")
        assert stripped.manifest.reward_status == "stripped"
        assert run_cli("inspect", tmp_path / "expert") == 0
        out = capsys.readouterr().out
        assert "histogram" in out
        assert '"reward_status": "ground_truth"' in out

    def test_label_and_report_flags(self, tmp_path, capsys):
        run_cli("gen", "--out", tmp_path, "--experts", 2, "--unlabeled", 2,
                "--horizon", 25, "--seed", 3)
        assert run_cli("label", "--experts", tmp_path / "expert",
                       "--unlabeled", tmp_path / "unlabeled",
                       "--out", tmp_path / "labeled",
                       "--epsilon", 0.02, "--max-iters", 200,
                       "--alpha", 5, "--beta", 1, "--seed", 1) == 0
        labeled = load_dataset(tmp_path / "labeled")
        assert labeled.manifest.reward_status == "labeled"
        assert labeled.manifest.seeds["label"] == 1
        report = json.loads(
            (tmp_path / "labeled.labelreport.json").read_text())
        assert len(report["episodes"]) == 2
        out = capsys.readouterr().out
        assert "labeled 2/2" in out

    def test_label_max_experts(self, tmp_path):
        run_cli("gen", "--out", tmp_path, "--experts", 3, "--unlabeled", 2,
                "--horizon", 25, "--seed", 3)
        assert run_cli("label", "--experts", tmp_path / "expert",
                       "--unlabeled", tmp_path / "unlabeled",
                       "--out", tmp_path / "labeled1",
                       "--max-iters", 200, "--max-experts", 1) == 0
        report = json.loads(
            (tmp_path / "labeled1.labelreport.json").read_text())
        sources = {row["source_expert"] for row in report["episodes"]}
        assert sources == {"expert-0000"}

    def test_rollout_expert_and_paths(self, tmp_path, capsys):
        assert run_cli("rollout", "--policy", "expert", "--episodes", 2,
                       "--horizon", 30, "--seed", 0,
                       "--out", tmp_path / "demo") == 0
        ds = load_dataset(tmp_path / "demo")
        assert ds.manifest.episode_count == 2
        assert run_cli("paths", tmp_path / "demo",
                       "--out", tmp_path / "demo.svg") == 0
        assert (tmp_path / "demo.svg").exists()
        out = capsys.readouterr().out
        assert "mean camera-cube distance" in out


class TestPipelineCommands:
    def _spec(self, tmp_path):
        return {
            "out_dir": str(tmp_path / "run"), "stages": list(
                ("gen", "label", "train", "eval", "report")),
            "seeds": [0], "eval_interval": 30, "eval_episodes": 2,
            "workers": 1, "profile": "tiny",
            "env": {"horizon": 25},
            "corpus": {"expert_episodes": 2, "unlabeled_episodes": 3,
                       "seed": 11},
            "otr": {"max_iters": 150},
            "iql": {"hidden": [8, 8], "gradient_steps": 60, "batch_size": 8,
                    "eval_interval": 30},
        }

    def test_run_from_config(self, tmp_path, capsys):
        cfg = tmp_path / "spec.json"
        cfg.write_text(json.dumps(self._spec(tmp_path)))
        assert run_cli("run", "--config", cfg) == 0
        out = capsys.readouterr().out
        assert "paper-quoted" in out
        assert (tmp_path / "run" / "aggregate.csv").exists()
        assert (tmp_path / "run" / "report.txt").exists()
        assert (tmp_path / "run" / "spec.json").exists()

    def test_eval_single_checkpoint(self, tmp_path, capsys):
        cfg = tmp_path / "spec.json"
        cfg.write_text(json.dumps(self._spec(tmp_path)))
        run_cli("run", "--config", cfg)
        capsys.readouterr()  # drop the run's own output
        ckpts = sorted((tmp_path / "run" / "seed_000" / "checkpoints").iterdir())
        assert run_cli("eval", "--checkpoint", ckpts[-1], "--episodes", 2,
                       "--horizon", 25, "--seed", 4) == 0
        record = json.loads(capsys.readouterr().out)
        assert record["episode_steps_mean"] == 25.0
        assert 0.0 <= record["normalized_return"] <= 1.0

    def test_report_from_aggregates(self, tmp_path, capsys):
        cfg = tmp_path / "spec.json"
        cfg.write_text(json.dumps(self._spec(tmp_path)))
        run_cli("run", "--config", cfg)
        capsys.readouterr()
        assert run_cli("report", "--aggregates",
                       tmp_path / "run" / "aggregate.csv") == 0
        out = capsys.readouterr().out
        assert "0.81 ± 0.08" in out
