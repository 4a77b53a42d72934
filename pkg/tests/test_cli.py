"""End-to-end CLI contract: subcommands, artifacts, exit codes, determinism."""

import json
from pathlib import Path

import numpy as np
import pytest

from aresnet_vit.cli import main
from aresnet_vit.reference import reference_rows, suite_variants


def micro_config(tmp_path, **overrides):
    cfg = {
        "dataset": {"kind": "synth", "root": None, "synth_seed": 5, "per_class": 6, "size": 16},
        "variant": "aresnet-vit",
        "scale": "tiny",
        "seed": 3,
        "out_dir": str(tmp_path / "out"),
        "threshold": 0.5,
        "batch_size": 4,
        "max_epochs": 2,
        "patience": 5,
        "lr": 0.001,
        "beta1": 0.9,
        "beta2": 0.999,
        "adam_eps": 1e-8,
    }
    cfg.update(overrides)
    tmp_path.mkdir(parents=True, exist_ok=True)
    path = tmp_path / "exp.json"
    path.write_text(json.dumps(cfg, indent=2))
    return path, cfg


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("trained")
    cfg_path, cfg = micro_config(tmp)
    assert main(["train", "--config", str(cfg_path)]) == 0
    return Path(cfg["out_dir"]), cfg_path, cfg


class TestSynth:
    def test_fixture_written_with_manifest(self, tmp_path):
        out = tmp_path / "fix"
        assert main(["synth", "--seed", "7", "--per-class", "32", "--size", "64",
                     "--out", str(out)]) == 0
        lines = (out / "labels.csv").read_text().splitlines()
        assert len(lines) - 1 == 64
        assert sum(1 for ln in lines[1:] if ln.endswith(",0")) == 32

    def test_same_seed_byte_identical_directory(self, tmp_path):
        outs = []
        for tag in ("a", "b"):
            out = tmp_path / tag
            assert main(["synth", "--seed", "9", "--per-class", "6", "--size", "24",
                         "--out", str(out)]) == 0
            outs.append(out)
        files_a = sorted(p.name for p in outs[0].iterdir())
        files_b = sorted(p.name for p in outs[1].iterdir())
        assert files_a == files_b
        for name in files_a:
            assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes(), name


class TestTrain:
    def test_artifacts_exist(self, trained):
        out_dir, _, _ = trained
        assert (out_dir / "checkpoint.ckpt").is_file()
        assert (out_dir / "training_log.csv").read_text().splitlines()[0] == \
            "epoch,train_loss,val_loss,seconds"
        assert (out_dir / "split.json").is_file()

    def test_resolved_config_echoes_every_field(self, trained):
        out_dir, _, cfg = trained
        resolved = json.loads((out_dir / "resolved_config.json").read_text())
        assert resolved == cfg

    def test_malformed_config_exits_2_with_field_path(self, tmp_path, capsys):
        path, _ = micro_config(tmp_path, lr="fast")
        assert main(["train", "--config", str(path)]) == 2
        assert "lr" in capsys.readouterr().err

    def test_missing_dataset_dir_exits_3(self, tmp_path):
        path, _ = micro_config(tmp_path, dataset={"kind": "fixture", "root": str(tmp_path / "nope")})
        assert main(["train", "--config", str(path)]) == 3

    def test_divergent_training_exits_4(self, tmp_path):
        path, _ = micro_config(tmp_path, lr=1e200, max_epochs=2)
        assert main(["train", "--config", str(path)]) == 4

    def test_unknown_field_rejected(self, tmp_path, capsys):
        path, _ = micro_config(tmp_path, momentum=0.9)
        assert main(["train", "--config", str(path)]) == 2
        assert "momentum" in capsys.readouterr().err

    def test_rerun_with_echoed_config_reproduces_checkpoint(self, tmp_path):
        cfg_path, cfg = micro_config(tmp_path)
        assert main(["train", "--config", str(cfg_path)]) == 0
        out_dir = Path(cfg["out_dir"])
        first = (out_dir / "checkpoint.ckpt").read_bytes()
        echoed = out_dir / "resolved_config.json"
        assert main(["train", "--config", str(echoed)]) == 0
        assert (out_dir / "checkpoint.ckpt").read_bytes() == first


class TestEvaluate:
    def test_report_files_and_stdout_row(self, trained, capsys):
        out_dir, _, _ = trained
        assert main(["evaluate", "--checkpoint", str(out_dir / "checkpoint.ckpt")]) == 0
        captured = capsys.readouterr().out.splitlines()
        assert captured[-2] == "method,acc,tpr,tnr,auc"
        assert captured[-1].startswith("aresnet-vit,")
        report = json.loads((out_dir / "metrics_test.json").read_text())
        assert set(report) >= {"acc", "tpr", "tnr", "auc", "counts", "roc"}
        csv_lines = (out_dir / "metrics_test.csv").read_text().splitlines()
        assert csv_lines[0] == "method,acc,tpr,tnr,auc"

    def test_corrupt_checkpoint_exits_3(self, tmp_path):
        bad = tmp_path / "bad.ckpt"
        bad.write_bytes(b"ARVT" + b"\x01\x00\x00\x00" + b"\xff" * 4)
        assert main(["evaluate", "--checkpoint", str(bad)]) == 3

    def test_table2_reference_row_shape(self):
        # column-order fixture from the published table; never an expected
        # desk-scale result
        rows = reference_rows("architecture")
        assert rows[0] == ["method", "acc", "tpr", "tnr", "auc"]
        target = [r for r in rows[1:] if r[0] == "aresnet-vit"][0]
        assert target[1:] == ["0.889", "0.861", "0.896", "0.925"]


class TestHeatmapCommand:
    def test_two_ids_make_four_pngs(self, trained, tmp_path):
        out_dir, _, _ = trained
        ids = "synth-benign-0000,synth-malignant-0001"
        heat_out = tmp_path / "maps"
        assert main(["heatmap", "--checkpoint", str(out_dir / "checkpoint.ckpt"),
                     "--ids", ids, "--method", "grad-cam", "--out", str(heat_out)]) == 0
        pngs = sorted(p.name for p in heat_out.glob("*.png"))
        assert pngs == [
            "synth-benign-0000.grad-cam.overlay.png",
            "synth-benign-0000.grad-cam.png",
            "synth-malignant-0001.grad-cam.overlay.png",
            "synth-malignant-0001.grad-cam.png",
        ]

    def test_rerun_byte_identical(self, trained, tmp_path):
        out_dir, _, _ = trained
        blobs = []
        for tag in ("x", "y"):
            dest = tmp_path / tag
            assert main(["heatmap", "--checkpoint", str(out_dir / "checkpoint.ckpt"),
                         "--ids", "synth-benign-0001", "--method", "attention-rollout",
                         "--out", str(dest)]) == 0
            blobs.append((dest / "synth-benign-0001.attention-rollout.png").read_bytes())
        assert blobs[0] == blobs[1]

    def test_unknown_id_exits_3(self, trained, tmp_path, capsys):
        out_dir, _, _ = trained
        code = main(["heatmap", "--checkpoint", str(out_dir / "checkpoint.ckpt"),
                     "--ids", "synth-benign-9999", "--out", str(tmp_path / "m")])
        assert code == 3
        assert "synth-benign-9999" in capsys.readouterr().err


class TestAblate:
    def test_attention_suite_rows_and_determinism(self, tmp_path):
        csvs = []
        for tag in ("r1", "r2"):
            cfg_path, cfg = micro_config(tmp_path / tag, out_dir=str(tmp_path / tag / "suite"))
            assert main(["ablate", "--suite", "attention", "--config", str(cfg_path)]) == 0
            csvs.append((tmp_path / tag / "suite" / "suite_attention.csv").read_bytes())
        assert csvs[0] == csvs[1]
        lines = csvs[0].decode().splitlines()
        assert lines[0] == "method,acc,tpr,tnr"
        assert [ln.split(",")[0] for ln in lines[1:]] == suite_variants("attention")

    def test_architecture_suite_shares_split_ids(self, tmp_path):
        cfg_path, cfg = micro_config(tmp_path, out_dir=str(tmp_path / "suite"))
        assert main(["ablate", "--suite", "architecture", "--config", str(cfg_path)]) == 0
        lines = (tmp_path / "suite" / "suite_architecture.csv").read_text().splitlines()
        assert lines[0] == "method,acc,tpr,tnr,auc"
        assert [ln.split(",")[0] for ln in lines[1:]] == suite_variants("architecture")
        splits = []
        for variant in suite_variants("architecture"):
            splits.append(json.loads((tmp_path / "suite" / variant / "split.json").read_text()))
        assert all(s == splits[0] for s in splits[1:])
