"""CLI surface: subcommands wired to files end to end."""

import io
import json
import subprocess
import sys

import numpy as np
import pytest

from gwa.cli import main

CONFIG = """\
model = "mlp"
hidden_dim = 32
optimizer = "sgd"
lr = 0.03
epochs = 12
batch_size = 32
seed = 0
label_noise_fraction = 0.2
dataset = "gaussian_blobs"
n_samples = 300
classes = 3
dim = 10
separation = 3.0
val_fraction = 0.2
test_size = 300
"""


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "cfg.toml"
    cfg.write_text(CONFIG)
    out = root / "run"
    assert main(["train", "--config", str(cfg), "--out", str(out)]) == 0
    return out


class TestTrain:
    def test_outputs_exist(self, run_dir):
        for name in ("trace.bin", "scores.bin", "epochs.jsonl", "report.json"):
            assert (run_dir / name).exists()

    def test_report_is_valid_json(self, run_dir):
        report = json.loads((run_dir / "report.json").read_text())
        assert len(report["epochs"]) == 12
        assert "gwa_scratch" in report["decisions"]
        assert report["config"]["model"] == "mlp"

    def test_plots_flag_records_paths(self, tmp_path):
        cfg = tmp_path / "cfg.toml"
        cfg.write_text(CONFIG.replace("epochs = 12", "epochs = 4"))
        out = tmp_path / "run"
        assert main(["train", "--config", str(cfg), "--out", str(out), "--plots"]) == 0
        report = json.loads((out / "report.json").read_text())
        assert "plots/overlay.svg" in report["paths"]["plots"]
        for rel in report["paths"]["plots"]:
            assert (out / rel).exists()


class TestIngest:
    def test_ingest_matches_train_series(self, run_dir, tmp_path):
        out = tmp_path / "ing"
        assert main(
            ["ingest", "--trace", str(run_dir / "trace.bin"), "--out", str(out), "--per-sample"]
        ) == 0
        train_lines = (run_dir / "epochs.jsonl").read_text().splitlines()
        ingest_lines = (out / "epochs.jsonl").read_text().splitlines()
        assert train_lines == ingest_lines
        assert (out / "scores.bin").read_bytes() == (run_dir / "scores.bin").read_bytes()
        assert (out / "decision.json").exists()
        assert (out / "labelwave.json").exists()

    def test_repeated_ingest_is_byte_identical(self, run_dir, tmp_path):
        outs = []
        for name in ("a", "b"):
            out = tmp_path / name
            main(["ingest", "--trace", str(run_dir / "trace.bin"), "--out", str(out), "--per-sample"])
            outs.append(out)
        for fname in ("epochs.jsonl", "decision.json", "labelwave.json", "scores.bin"):
            assert (outs[0] / fname).read_bytes() == (outs[1] / fname).read_bytes()

    def test_stdin_ingest(self, run_dir, tmp_path):
        raw = (run_dir / "trace.bin").read_bytes()
        out = tmp_path / "stdin_out"
        proc = subprocess.run(
            [sys.executable, "-m", "gwa.cli", "ingest", "--trace", "-", "--out", str(out)],
            input=raw,
            capture_output=True,
        )
        assert proc.returncode == 0, proc.stderr.decode()
        assert (out / "epochs.jsonl").read_text() == (run_dir / "epochs.jsonl").read_text()

    def test_projection_flag(self, run_dir, tmp_path):
        out = tmp_path / "proj"
        assert main(
            [
                "ingest", "--trace", str(run_dir / "trace.bin"), "--out", str(out),
                "--projection-dim", "8", "--projection-seed", "3",
            ]
        ) == 0
        plain = [json.loads(l) for l in (run_dir / "epochs.jsonl").read_text().splitlines()]
        proj = [json.loads(l) for l in (out / "epochs.jsonl").read_text().splitlines()]
        assert len(plain) == len(proj)
        assert any(abs(a["m1"] - b["m1"]) > 1e-9 for a, b in zip(plain, proj))


class TestAnalyze:
    def test_stop(self, run_dir, capsys):
        assert main(["analyze", "stop", "--trace", str(run_dir)]) == 0
        doc = json.loads(capsys.readouterr().out)
        assert doc["criterion"] == "gwa_scratch"
        assert 0 <= doc["selected_epoch"] < 12

    def test_stop_labelwave_needs_fractions(self, run_dir, tmp_path, capsys):
        # train dir has no labelwave.json; ingest dir does
        out = tmp_path / "ing"
        main(["ingest", "--trace", str(run_dir / "trace.bin"), "--out", str(out)])
        capsys.readouterr()
        assert main(["analyze", "stop", "--trace", str(out), "--criterion", "labelwave"]) == 0
        doc = json.loads(capsys.readouterr().out)
        assert doc["criterion"] == "labelwave"

    def test_rank_includes_precision_when_mask_known(self, run_dir, capsys):
        assert main(["analyze", "rank", "--trace", str(run_dir), "--top", "5"]) == 0
        doc = json.loads(capsys.readouterr().out)
        assert len(doc["samples"]) == 5
        assert doc["num_flipped"] == 60
        assert 0.0 <= doc["precision_at_num_flipped"] <= 1.0

    def test_compare(self, run_dir, capsys):
        assert main(["analyze", "compare", "--trace", str(run_dir)]) == 0
        doc = json.loads(capsys.readouterr().out)
        assert len(doc["spearman_gamma_vs_grad_norm"]) == 12


class TestPlot:
    def test_plot_from_report(self, run_dir, tmp_path, capsys):
        out = tmp_path / "plots"
        assert main(["plot", "--report", str(run_dir / "report.json"), "--out", str(out)]) == 0
        created = json.loads(capsys.readouterr().out)["created"]
        assert "series.csv" in created
        assert "overlay.svg" in created
        for name in created:
            assert (out / name).exists()


class TestBench:
    def test_bench_small(self, capsys):
        assert main(["bench", "--samples", "2048", "--dim", "32", "--classes", "5", "--batch", "256"]) == 0
        doc = json.loads(capsys.readouterr().out)
        assert doc["ingest_samples_per_s"] > 0
        assert "python" in doc["kernel_samples_per_s"]
