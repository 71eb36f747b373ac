"""End-to-end command-line checks on a micro corpus."""

import json
import os
import subprocess
import sys

import pytest

from tbpslab.cli import main
from tbpslab.data import load_jsonl, oracle_rank1

MICRO = [
    "--set", "data.n_identities=10",
    "--set", "data.images_per_identity=2",
    "--set", "data.captions_per_image=1",
    "--set", "model.hidden_dim=12",
    "--set", "model.embed_dim=6",
    "--set", "train.epochs=2",
    "--set", "train.batch_size=8",
]


def run_files(dirpath):
    return sorted(os.listdir(dirpath))


class TestTrainCommand:
    def test_writes_all_artifacts(self, tmp_path):
        out = tmp_path / "run"
        assert main(["train", *MICRO, "--outdir", str(out)]) == 0
        assert run_files(out) == [
            "config.yaml", "final.ckpt", "history.csv", "init.ckpt",
            "manifest.json", "report.json", "report.txt",
        ]
        report = json.loads((out / "report.json").read_text())
        assert set(report["metrics"]) >= {"rank1", "mAP", "mINP"}
        first = (out / "history.csv").read_text().splitlines()[0]
        assert first.startswith("# config=") and "seed=" in first

    def test_rerun_is_byte_identical_except_manifest(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        assert main(["train", *MICRO, "--outdir", str(a)]) == 0
        assert main(["train", *MICRO, "--outdir", str(b)]) == 0
        for name in run_files(a):
            if name == "manifest.json":
                continue  # carries wall-clock timings by design
            assert (a / name).read_bytes() == (b / name).read_bytes(), name

    def test_train_on_pregenerated_corpus(self, tmp_path):
        data = tmp_path / "corpus.jsonl"
        out = tmp_path / "run"
        assert main(["generate", *MICRO, "--out", str(data)]) == 0
        assert main(["train", *MICRO, "--data", str(data), "--outdir", str(out)]) == 0
        # generating inside the run gives the same corpus, so same model
        out2 = tmp_path / "run2"
        assert main(["train", *MICRO, "--outdir", str(out2)]) == 0
        assert (out / "final.ckpt").read_bytes() == (out2 / "final.ckpt").read_bytes()

    def test_default_outdir_under_env_root(self, tmp_path, monkeypatch):
        monkeypatch.setenv("TBPSLAB_OUT", str(tmp_path / "root"))
        assert main(["train", *MICRO]) == 0
        (run,) = os.listdir(tmp_path / "root")
        assert "-" in run  # timestamp-fingerprint


class TestGenerateAndEval:
    def test_generate_then_eval(self, tmp_path):
        data = tmp_path / "corpus.jsonl"
        out = tmp_path / "run"
        assert main(["generate", *MICRO, "--out", str(data)]) == 0
        ds = load_jsonl(str(data))
        assert oracle_rank1(ds.test, ds.attrs) == 1.0
        assert main(["train", *MICRO, "--outdir", str(out)]) == 0
        rc = main(["eval", "--checkpoint", str(out / "final.ckpt"),
                   "--data", str(data), "--split", "test"])
        assert rc == 0


class TestTables:
    def test_ablate_augmentation_csv(self, tmp_path):
        out = tmp_path / "tab"
        assert main(["ablate", "augmentation", *MICRO, "--outdir", str(out)]) == 0
        lines = (out / "ablate-augmentation.csv").read_text().splitlines()
        assert lines[0].startswith("# config=")
        assert lines[1].split(",")[0] == "row"
        rows = [ln.split(",")[0] for ln in lines[2:]]
        assert rows == ["none", "image-only", "text-only", "full"]

    def test_fewshot_csv(self, tmp_path):
        out = tmp_path / "tab"
        assert main(["fewshot", *MICRO, "--fractions", "0.5,1.0",
                     "--outdir", str(out)]) == 0
        lines = (out / "fewshot.csv").read_text().splitlines()
        assert len(lines) == 4  # comment, header, two rows

    def test_compress_csv(self, tmp_path):
        out = tmp_path / "tab"
        assert main(["compress", *MICRO, "--mode", "freeze", "--xs", "0,1",
                     "--outdir", str(out)]) == 0
        lines = (out / "compress-freeze.csv").read_text().splitlines()
        assert [ln.split(",")[0] for ln in lines[2:]] == ["0", "1"]

    def test_contribution_csv(self, tmp_path):
        out = tmp_path / "tab"
        assert main(["contribution", *MICRO, "--outdir", str(out)]) == 0
        lines = (out / "contribution.csv").read_text().splitlines()
        assert lines[1].split(",") == ["module", "delta", "c1", "c2", "combined"]
        assert len(lines) == 2 + 10  # one row per module


class TestExitCodes:
    def test_unknown_key_is_config_error(self, capsys):
        assert main(["train", "--set", "bogus.key=1"]) == 1
        assert "config error" in capsys.readouterr().err

    def test_unknown_preset_is_config_error(self):
        assert main(["train", "--preset", "nope"]) == 1

    def test_bad_value_is_config_error(self):
        assert main(["train", "--set", "train.epochs=0"]) == 1

    def test_usage_error(self):
        assert main([]) == 1
        assert main(["no-such-command"]) == 1

    def test_help_exits_zero(self):
        assert main(["--help"]) == 0

    def test_missing_data_file_is_runtime_error(self, capsys):
        rc = main(["eval", "--checkpoint", "/no/ckpt", "--data", "/no/data.jsonl"])
        assert rc == 2
        assert "error" in capsys.readouterr().err

    def test_validation_precedes_side_effects(self, tmp_path):
        out = tmp_path / "never"
        assert main(["train", "--set", "train.epochs=0", "--outdir", str(out)]) == 1
        assert not out.exists()


def test_console_entry_point():
    proc = subprocess.run(
        [sys.executable, "-m", "tbpslab.cli", "--help"],
        capture_output=True, text=True,
    )
    assert proc.returncode == 0
    assert "selftest" in proc.stdout
