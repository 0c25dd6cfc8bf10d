import json
import subprocess
import sys

import numpy as np
import pytest

from dasksvd.cli import EXIT_CONFIG, EXIT_DATA, EXIT_OK, digest, main

SMALL = {
    "das": {"iterations": 3, "samples_per_class": 150},
    "data": {"train_per_class": 200, "val_per_class": 50},
    "mlp": {"hidden": 30, "max_epochs": 60},
    "ksvd": {"max_sweeps": 5},
    "selection": {"per_class": 3},
}


def run(*argv):
    return main([str(a) for a in argv])


def output_files(d):
    return {p.name: p.read_bytes() for p in sorted(d.iterdir()) if p.is_file() and p.name != "run.json"}


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "cfg.json"
    cfg.write_text(json.dumps(SMALL))
    assert run("synth", "--n-records", 8, "--duration-hours", 2, "--seed", 0, "--out", root / "coh") == EXIT_OK
    assert run("prepare", "--records", root / "coh/records", "--cohort", root / "coh/cohort.csv",
               "--split", "train", "--config", cfg, "--out", root / "prep") == EXIT_OK
    assert run("learn", "--segments", root / "prep", "--config", cfg, "--out", root / "dict") == EXIT_OK
    assert run("train", "--segments", root / "prep", "--dictionary", root / "dict", "--config", cfg,
               "--out", root / "model") == EXIT_OK
    assert run("classify", "--segments", root / "prep", "--dictionary", root / "dict",
               "--model", root / "model", "--config", cfg, "--out", root / "cls") == EXIT_OK
    assert run("screen", "--records", root / "coh/records", "--dictionary", root / "dict",
               "--model", root / "model", "--cohort", root / "coh/cohort.csv", "--config", cfg,
               "--out", root / "scr") == EXIT_OK
    return root


class TestPipeline:
    def test_synth_outputs(self, workspace):
        assert len(list((workspace / "coh/records").glob("*.events.csv"))) == 8
        assert (workspace / "coh/cohort.csv").read_text().startswith("id,duration_hours,true_ahi,split")

    def test_prepare_outputs(self, workspace):
        meta = json.loads((workspace / "prep/segments.json").read_text())
        assert meta["n"] == sum(meta["class_counts"].values())
        assert (workspace / "prep/segments.index.csv").exists()

    def test_dictionary_sidecar(self, workspace):
        meta = json.loads((workspace / "dict/dictionary.json").read_text())
        assert meta["kind"] == "structured" and meta["m"] == 9
        assert meta["atoms_per_class"] == {"N": 3, "A": 3, "H": 3}
        assert meta["config"]["iterations"] == 3

    def test_train_outputs(self, workspace):
        model = json.loads((workspace / "model/model.json").read_text())
        assert model["dims"] == {"input": 9, "hidden": 30, "output": 3}
        report = json.loads((workspace / "model/train_report.json").read_text())
        assert report["epochs_run"] <= 60

    def test_classify_outputs(self, workspace):
        names = set(output_files(workspace / "cls"))
        assert names == {"predictions.csv", "confusion.csv", "confusion_normalized.csv", "metrics.csv"}

    def test_screen_outputs(self, workspace):
        summary = json.loads((workspace / "scr/summary.json").read_text())
        assert 0.0 <= summary["auc"] <= 1.0
        assert (workspace / "scr/roc.svg").read_text().startswith("<svg")
        lines = (workspace / "scr/screening.csv").read_text().splitlines()
        assert len(lines) == 9

    def test_run_json(self, workspace):
        doc = json.loads((workspace / "model/run.json").read_text())
        assert doc["command"] == "train" and doc["seed"] == 0
        assert doc["config"]["mlp"]["hidden"] == 30
        assert doc["inputs"]["dictionary"]["sha256"] == digest(workspace / "dict")
        assert set(doc["versions"]) >= {"dasksvd", "numpy", "python"}


class TestReproducibility:
    @pytest.mark.parametrize("step", ["coh", "prep", "dict", "model", "cls", "scr"])
    def test_replay_byte_identical(self, workspace, step, tmp_path):
        assert run("replay", workspace / step / "run.json", "--out", tmp_path / step) == EXIT_OK
        assert output_files(tmp_path / step) == output_files(workspace / step)
        if step == "coh":
            assert digest(tmp_path / "coh/records") == digest(workspace / "coh/records")

    def test_rerun_identical(self, workspace, tmp_path):
        cfg = workspace / "cfg.json"
        assert run("learn", "--segments", workspace / "prep", "--config", cfg, "--out", tmp_path) == EXIT_OK
        assert output_files(tmp_path) == output_files(workspace / "dict")

    def test_replay_detects_changed_input(self, workspace, tmp_path):
        doc = json.loads((workspace / "model/run.json").read_text())
        doc["inputs"]["segments"]["sha256"] = "0" * 64
        (tmp_path / "run.json").write_text(json.dumps(doc))
        assert run("replay", tmp_path / "run.json", "--out", tmp_path / "x") == EXIT_DATA


class TestErrors:
    def test_config_error_exit(self, workspace, tmp_path):
        code = run("learn", "--segments", workspace / "prep", "--set", "das.tau1=2", "--out", tmp_path / "o")
        assert code == EXIT_CONFIG
        assert not (tmp_path / "o").exists()

    def test_unknown_key(self, tmp_path):
        assert run("config", "--set", "bogus=1", "--out", tmp_path) == EXIT_CONFIG

    def test_missing_input(self, tmp_path):
        assert run("learn", "--segments", tmp_path / "none.csv", "--out", tmp_path / "o") == EXIT_DATA

    def test_quota_error(self, workspace, tmp_path):
        code = run("learn", "--segments", workspace / "prep", "--set", "data.train_per_class=100000",
                   "--set", "das.samples_per_class=10", "--out", tmp_path / "o")
        assert code == EXIT_DATA

    def test_config_command(self, tmp_path):
        assert run("config", "--seed", 4, "--out", tmp_path) == EXIT_OK
        assert json.loads((tmp_path / "config.json").read_text())["seed"] == 4

    def test_default_das_reports_sixty_atoms(self, workspace, tmp_path):
        code = run("learn", "--segments", workspace / "prep",
                   "--set", "data.train_per_class=200", "--set", "data.val_per_class=50",
                   "--set", "das.samples_per_class=100", "--set", "ksvd.max_sweeps=2",
                   "--out", tmp_path)
        assert code == EXIT_OK
        meta = json.loads((tmp_path / "dictionary.json").read_text())
        assert meta["m"] == 60
        assert meta["atoms_per_class"] == {"N": 20, "A": 20, "H": 20}

    def test_module_entry_point(self):
        out = subprocess.run([sys.executable, "-m", "dasksvd", "--version"], capture_output=True, text=True)
        assert out.returncode == 0 and out.stdout.startswith("dasksvd")


def test_binary_method(workspace, tmp_path):
    cfg = workspace / "cfg.json"
    assert run("learn", "--segments", workspace / "prep", "--method", "mdas-bc", "--config", cfg,
               "--out", tmp_path / "d") == EXIT_OK
    meta = json.loads((tmp_path / "d/dictionary.json").read_text())
    assert meta["kind"] == "mdas" and meta["classes"] == ["N", "A+H"]
    assert len(meta["selected_rows"]) == 6
    assert np.all(np.array(meta["selected_rows"]) < meta["m"])
