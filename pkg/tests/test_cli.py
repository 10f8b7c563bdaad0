"""CLI subcommands end to end on small fixtures."""

import json
from pathlib import Path

import numpy as np
import pytest

from vadreg.cli import main
from vadreg.report import published_report, to_records
from vadreg.synth import write_fixture_csvs


@pytest.fixture(scope="module")
def fixture_files(tmp_path_factory):
    root = tmp_path_factory.mktemp("fixture")
    fer = root / "faces.csv"
    labels = root / "labels.csv"
    write_fixture_csvs(30, seed=1, fer_path=fer, labels_path=labels,
                       splits=(20, 5, 5))
    return fer, labels


class TestTrainCommand:
    def test_smoke_writes_checkpoint_trace_manifest(self, fixture_files, tmp_path, capsys):
        fer, labels = fixture_files
        rc = main(["train", "--dim", "v", "--preset", "mini", "--epochs", "1",
                   "--fer2013", str(fer), "--labels", str(labels),
                   "--out", str(tmp_path)])
        assert rc == 0
        assert (tmp_path / "checkpoint_v.ckpt").exists()
        assert (tmp_path / "trace_v.csv").exists()
        manifest = json.loads((tmp_path / "manifest.json").read_text())
        assert manifest["subcommand"] == "train"
        assert manifest["config"]["training"]["orth_weight"] == 0.1   # default echoed
        assert "l_task=" in capsys.readouterr().out

    def test_paper_defaults_echoed(self, fixture_files, tmp_path):
        fer, labels = fixture_files
        main(["train", "--dim", "v", "--preset", "mini", "--max-iters", "1",
              "--epochs", "120", "--lr", "0.01",
              "--fer2013", str(fer), "--labels", str(labels), "--out", str(tmp_path)])
        cfg = json.loads((tmp_path / "manifest.json").read_text())["config"]["training"]
        assert cfg["epochs"] == 120
        assert cfg["lr0"] == 0.01
        assert cfg["batch_size"] == 64
        assert cfg["lr_decay_factor"] == 10.0
        assert cfg["lr_decay_every"] == 10000

    def test_missing_file_exit_2(self, tmp_path):
        rc = main(["train", "--dim", "v", "--preset", "mini", "--epochs", "1",
                   "--fer2013", str(tmp_path / "nope.csv"),
                   "--labels", str(tmp_path / "nope2.csv"), "--out", str(tmp_path)])
        assert rc == 2

    def test_diverged_exit_3(self, fixture_files, tmp_path):
        fer, labels = fixture_files
        with np.errstate(over="ignore", invalid="ignore"):
            rc = main(["train", "--dim", "v", "--preset", "mini", "--epochs", "30",
                       "--lr", "1e12", "--fer2013", str(fer), "--labels", str(labels),
                       "--out", str(tmp_path)])
        assert rc == 3

    def test_rerun_reproduces_output_bytes(self, fixture_files, tmp_path):
        fer, labels = fixture_files
        outs = []
        for name in ("r1", "r2"):
            out = tmp_path / name
            main(["train", "--dim", "v", "--preset", "mini", "--max-iters", "3",
                  "--fer2013", str(fer), "--labels", str(labels), "--out", str(out)])
            manifest = json.loads((out / "manifest.json").read_text())
            manifest.pop("out_dir")
            outs.append(((out / "checkpoint_v.ckpt").read_bytes(),
                         (out / "trace_v.csv").read_bytes(),
                         manifest))
        assert outs[0] == outs[1]


class TestEvaluateCommand:
    def test_records_emitted(self, fixture_files, tmp_path, capsys):
        fer, labels = fixture_files
        train_out = tmp_path / "train"
        main(["train", "--dim", "v", "--preset", "mini", "--max-iters", "3",
              "--fer2013", str(fer), "--labels", str(labels), "--out", str(train_out)])
        rc = main(["evaluate", "--checkpoint", str(train_out / "checkpoint_v.ckpt"),
                   "--fer2013", str(fer), "--labels", str(labels),
                   "--out", str(tmp_path / "eval")])
        assert rc == 0
        records = (tmp_path / "eval" / "records.txt").read_text()
        assert "dimension=v split=public" in records
        assert "dimension=v split=private" in records


class TestAblateCommand:
    def test_from_report_replicates_published_ranks(self, tmp_path, capsys):
        records = tmp_path / "published.txt"
        records.write_text(to_records(published_report()))
        rc = main(["ablate", "--from-report", str(records), "--out", str(tmp_path)])
        assert rc == 0
        out = capsys.readouterr().out
        assert "V=3" in out and "A=4" in out and "D=5" in out
        assert "0.059" in out
        assert (tmp_path / "tables.txt").exists()

    def test_fixture_run_produces_12_entries(self, fixture_files, tmp_path):
        fer, labels = fixture_files
        rc = main(["ablate", "--preset", "mini", "--max-iters", "2",
                   "--fer2013", str(fer), "--labels", str(labels),
                   "--out", str(tmp_path)])
        assert rc == 0
        lines = [l for l in (tmp_path / "records.txt").read_text().splitlines() if l]
        assert len(lines) == 12
        # both methods share seeds/data; manifests differ only in lambda
        assert (tmp_path / "checkpoint_baseline_v.ckpt").exists()
        assert (tmp_path / "checkpoint_ortho_v.ckpt").exists()


class TestStatsCommand:
    def test_distribution_and_split_counts(self, fixture_files, tmp_path, capsys):
        fer, labels = fixture_files
        rc = main(["stats", "--labels", str(labels), "--fer2013", str(fer),
                   "--out", str(tmp_path)])
        assert rc == 0
        out = capsys.readouterr().out
        assert "consistency-accepted images: 30" in out
        assert "Training" in out and "Total" in out
        assert (tmp_path / "stats.txt").exists()

    def test_missing_labels_exit_2(self, tmp_path):
        assert main(["stats", "--labels", str(tmp_path / "none.csv"),
                     "--out", str(tmp_path)]) == 2


class TestOracleCheckCommand:
    def test_default_grid_passes(self, tmp_path, capsys):
        rc = main(["oracle-check", "--seed", "7", "--out", str(tmp_path)])
        assert rc == 0
        assert "all oracle suites passed" in capsys.readouterr().out

    def test_deterministic_output(self, tmp_path, capsys):
        main(["oracle-check", "--seed", "7", "--out", str(tmp_path / "a")])
        first = capsys.readouterr().out
        main(["oracle-check", "--seed", "7", "--out", str(tmp_path / "b")])
        assert capsys.readouterr().out == first

    def test_forced_failure_exit_1(self, tmp_path):
        assert main(["oracle-check", "--force-fail", "--out", str(tmp_path)]) == 1
