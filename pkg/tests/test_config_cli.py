import json
import os
from pathlib import Path

import numpy as np
import pytest

from conftest import tiny_spec, write_image_tree
from sefish import SpecError, TrainConfig, build_model, save_weights
from sefish.cli import main
from sefish.config import read_config_file, write_snapshot

TINY_INI = """\
[model]
height = 16
width = 16
stages = 4x3,8x3
reduction_ratio = 2
fc_units = 16

[train]
epochs = 2
batch_size = 4
seed = 3
"""


@pytest.fixture()
def tiny_cfg(tmp_path):
    path = tmp_path / "config.ini"
    path.write_text(TINY_INI)
    return path


@pytest.fixture()
def dataset_dir(tmp_path):
    return write_image_tree(tmp_path / "data", num_classes=3, per_class=6, size=16)


def tree_snapshot(root: Path):
    return sorted((str(p.relative_to(root)), p.stat().st_size) for p in root.rglob("*"))


class TestConfigFile:
    def test_round_trip_through_snapshot(self, tmp_path):
        spec = tiny_spec(num_classes=5)
        config = TrainConfig(spec=spec, epochs=7, batch_size=2, seed=9)
        path = write_snapshot(tmp_path / "c.ini", spec, config, "best_validation",
                              {"data": "/somewhere"})
        cfg = read_config_file(path)
        assert cfg["model"]["stages"] == ((4, 3), (8, 3))
        assert cfg["model"]["num_classes"] == 5
        assert cfg["train"]["epochs"] == 7
        assert cfg["train"]["checkpoint_rule"] == "best_validation"
        assert cfg["paths"]["data"] == "/somewhere"

    def test_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "bad.ini"
        path.write_text("[train]\nepochz = 3\n")
        with pytest.raises(SpecError, match="epochz"):
            read_config_file(path)

    def test_unknown_section_rejected(self, tmp_path):
        path = tmp_path / "bad.ini"
        path.write_text("[cluster]\nnodes = 4\n")
        with pytest.raises(SpecError, match="cluster"):
            read_config_file(path)

    def test_bad_value_rejected(self, tmp_path):
        path = tmp_path / "bad.ini"
        path.write_text("[train]\nepochs = soon\n")
        with pytest.raises(SpecError, match="epochs"):
            read_config_file(path)

    def test_bad_stages_rejected(self, tmp_path):
        path = tmp_path / "bad.ini"
        path.write_text("[model]\nstages = 32by5\n")
        with pytest.raises(SpecError, match="32by5"):
            read_config_file(path)

    def test_missing_file_rejected(self, tmp_path):
        with pytest.raises(SpecError):
            read_config_file(tmp_path / "missing.ini")

    def test_malformed_ini_rejected(self, tmp_path):
        path = tmp_path / "bad.ini"
        path.write_text("epochs = 3\nno section header here\n")
        with pytest.raises(SpecError, match="malformed|cannot read"):
            read_config_file(path)


class TestPretrainCommand:
    def test_missing_data_flag_exits_2(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["pretrain"])
        assert exc.value.code == 2

    def test_run_directory_contents(self, dataset_dir, tiny_cfg, tmp_path, capsys):
        out = tmp_path / "run"
        code = main(["pretrain", "--data", str(dataset_dir), "--config", str(tiny_cfg),
                     "--out", str(out)])
        assert code == 0
        names = {p.name for p in out.iterdir()}
        assert {"config.ini", "manifest.json", "metrics.csv", "confusion.csv",
                "run.json", "weights_best.bin", "weights_final.bin"} <= names
        printed = capsys.readouterr().out
        assert "spec fingerprint: " in printed
        assert "test accuracy: " in printed

    def test_same_seed_identical_accuracy_fields(self, dataset_dir, tiny_cfg, tmp_path):
        outs = []
        for name in ("one", "two"):
            out = tmp_path / name
            assert main(["pretrain", "--data", str(dataset_dir), "--config", str(tiny_cfg),
                         "--out", str(out), "--seed", "7"]) == 0
            outs.append(json.loads((out / "run.json").read_text()))
        assert outs[0]["test_accuracy"] == outs[1]["test_accuracy"]
        assert outs[0]["epochs"] == outs[1]["epochs"]

    def test_dataset_directory_never_mutated(self, dataset_dir, tiny_cfg, tmp_path):
        before = tree_snapshot(dataset_dir)
        main(["pretrain", "--data", str(dataset_dir), "--config", str(tiny_cfg),
              "--out", str(tmp_path / "run")])
        assert tree_snapshot(dataset_dir) == before

    def test_out_root_env_var(self, dataset_dir, tiny_cfg, tmp_path, monkeypatch):
        monkeypatch.setenv("SEFISH_OUT", str(tmp_path / "runs"))
        code = main(["pretrain", "--data", str(dataset_dir), "--config", str(tiny_cfg),
                     "--seed", "4"])
        assert code == 0
        assert (tmp_path / "runs" / "pretrain_seed4" / "run.json").exists()

    def test_no_out_and_no_env_exits_2(self, dataset_dir, tiny_cfg, monkeypatch, capsys):
        monkeypatch.delenv("SEFISH_OUT", raising=False)
        code = main(["pretrain", "--data", str(dataset_dir), "--config", str(tiny_cfg)])
        assert code == 2
        assert "SpecError" in capsys.readouterr().err

    def test_reproducible_from_run_directory_alone(self, dataset_dir, tiny_cfg, tmp_path):
        first = tmp_path / "first"
        main(["pretrain", "--data", str(dataset_dir), "--config", str(tiny_cfg),
              "--out", str(first)])
        second = tmp_path / "second"
        code = main(["pretrain", "--data", str(dataset_dir),
                     "--config", str(first / "config.ini"),
                     "--manifest", str(first / "manifest.json"),
                     "--out", str(second)])
        assert code == 0
        assert (first / "run.json").read_bytes() == (second / "run.json").read_bytes()
        assert (first / "weights_final.bin").read_bytes() == (second / "weights_final.bin").read_bytes()


class TestPosttrainCommand:
    @pytest.fixture()
    def pretrained(self, dataset_dir, tiny_cfg, tmp_path):
        out = tmp_path / "pre"
        main(["pretrain", "--data", str(dataset_dir), "--config", str(tiny_cfg),
              "--out", str(out)])
        return out / "weights_final.bin"

    def test_surgery_to_new_class_count(self, pretrained, tmp_path, capsys):
        target = write_image_tree(tmp_path / "target", num_classes=4, per_class=4, size=16)
        out = tmp_path / "post"
        code = main(["posttrain", "--data", str(target), "--weights", str(pretrained),
                     "--classes", "4", "--epochs", "2", "--out", str(out)])
        assert code == 0
        record = json.loads((out / "run.json").read_text())
        assert record["config"]["model"]["num_classes"] == 4
        assert record["evaluated_epoch"] == record["config"]["epochs"]

    def test_augment_flag_recorded(self, pretrained, tmp_path):
        target = write_image_tree(tmp_path / "target", num_classes=4, per_class=4, size=16)
        out = tmp_path / "post"
        code = main(["posttrain", "--data", str(target), "--weights", str(pretrained),
                     "--augment", "on", "--epochs", "2", "--out", str(out)])
        assert code == 0
        record = json.loads((out / "run.json").read_text())
        assert record["config"]["augment"]["rotation_range"] == 15.0

    def test_augment_off_not_recorded(self, pretrained, tmp_path):
        target = write_image_tree(tmp_path / "target", num_classes=4, per_class=4, size=16)
        out = tmp_path / "post"
        main(["posttrain", "--data", str(target), "--weights", str(pretrained),
              "--augment", "off", "--epochs", "2", "--out", str(out)])
        record = json.loads((out / "run.json").read_text())
        assert record["config"]["augment"] is None

    def test_repeat_reports_mean(self, pretrained, tmp_path, capsys):
        target = write_image_tree(tmp_path / "target", num_classes=4, per_class=4, size=16)
        out = tmp_path / "rep"
        code = main(["posttrain", "--data", str(target), "--weights", str(pretrained),
                     "--repeat", "2", "--epochs", "2", "--out", str(out)])
        assert code == 0
        record = json.loads((out / "run.json").read_text())
        assert len(record["per_run_accuracies"]) == 2
        assert record["mean_accuracy"] == pytest.approx(
            sum(record["per_run_accuracies"]) / 2
        )
        assert (out / "run_000" / "run.json").exists()
        assert (out / "run_001" / "run.json").exists()

    def test_incompatible_config_exits_4(self, pretrained, tmp_path, capsys):
        target = write_image_tree(tmp_path / "target", num_classes=4, per_class=4, size=16)
        bad_cfg = tmp_path / "bad.ini"
        bad_cfg.write_text(TINY_INI.replace("4x3,8x3", "6x3,8x3"))
        code = main(["posttrain", "--data", str(target), "--weights", str(pretrained),
                     "--config", str(bad_cfg), "--out", str(tmp_path / "post")])
        assert code == 4
        assert "CompatibilityError" in capsys.readouterr().err

    def test_truncated_weights_exit_4(self, pretrained, tmp_path, capsys):
        target = write_image_tree(tmp_path / "target", num_classes=4, per_class=4, size=16)
        clipped = tmp_path / "clipped.bin"
        clipped.write_bytes(pretrained.read_bytes()[:100])
        code = main(["posttrain", "--data", str(target), "--weights", str(clipped),
                     "--out", str(tmp_path / "post")])
        assert code == 4
        assert "WeightsFormatError" in capsys.readouterr().err


class TestEvaluateCommand:
    @pytest.fixture()
    def weights_path(self, tmp_path):
        model = build_model(tiny_spec(num_classes=3), seed=0)
        return save_weights(model, tmp_path / "w.bin")

    def test_requires_manifest_or_all(self, dataset_dir, weights_path, capsys):
        code = main(["evaluate", "--data", str(dataset_dir), "--weights", str(weights_path)])
        assert code == 2

    def test_evaluate_all(self, dataset_dir, weights_path, capsys):
        code = main(["evaluate", "--data", str(dataset_dir), "--weights", str(weights_path),
                     "--all"])
        assert code == 0
        out = capsys.readouterr().out
        assert "samples: 18" in out
        assert "accuracy: " in out

    def test_evaluate_manifest_test_split(self, dataset_dir, weights_path, tmp_path, capsys):
        from sefish import ingest, split

        manifest = split(ingest(dataset_dir), seed=0)
        mpath = manifest.save(tmp_path / "manifest.json")
        outdir = tmp_path / "eval"
        code = main(["evaluate", "--data", str(dataset_dir), "--weights", str(weights_path),
                     "--manifest", str(mpath), "--out", str(outdir)])
        assert code == 0
        assert "samples: 3" in capsys.readouterr().out
        assert (outdir / "confusion.csv").exists()
        assert (outdir / "run.json").exists()

    def test_class_count_mismatch_exits_4(self, tmp_path, weights_path, capsys):
        other = write_image_tree(tmp_path / "other", num_classes=5, per_class=3, size=16)
        code = main(["evaluate", "--data", str(other), "--weights", str(weights_path), "--all"])
        assert code == 4


class TestGradcheckCommand:
    def test_all_primitives_listed_and_pass(self, capsys):
        code = main(["gradcheck"])
        assert code == 0
        out = capsys.readouterr().out
        for name in ("matmul", "conv2d", "maxpool2d", "global_avg_pool", "relu",
                     "sigmoid", "batch_norm", "dense", "softmax_cross_entropy", "se_block"):
            assert f"{name}: max_rel_err=" in out
        assert "FAIL" not in out

    def test_impossible_tolerance_exits_5(self, capsys):
        code = main(["gradcheck", "--tolerance", "1e-18"])
        assert code == 5


class TestInspectCommand:
    def test_prints_fingerprint_and_counts(self, tmp_path, capsys):
        spec = tiny_spec(num_classes=3)
        model = build_model(spec, seed=0)
        path = save_weights(model, tmp_path / "w.bin")
        code = main(["inspect", "--weights", str(path)])
        assert code == 0
        out = capsys.readouterr().out
        assert f"spec fingerprint: {spec.fingerprint()}" in out
        assert f"trainable parameters: {model.params.num_values('param')}" in out
        assert "stage1/conv/kernel [param] 3x3x3x4" in out

    def test_full_spec_count_matches_counting_script_fixture(self, tmp_path, capsys):
        from sefish import ModelSpec

        model = build_model(ModelSpec(), seed=0)
        path = save_weights(model, tmp_path / "full.bin")
        assert main(["inspect", "--weights", str(path)]) == 0
        out = capsys.readouterr().out
        assert "trainable parameters: 1946521" in out  # scripts/count_params.py
        assert "state values: 2112" in out


class TestExpandCommand:
    def test_writes_augmented_tree(self, dataset_dir, tmp_path):
        out = tmp_path / "expanded"
        code = main(["expand", "--data", str(dataset_dir), "--out", str(out),
                     "--per-image", "2", "--seed", "1"])
        assert code == 0
        written = list(out.rglob("*.png"))
        assert len(written) == 36  # 18 source images x 2
        assert {p.parent.name for p in written} == {"species_00", "species_01", "species_02"}
