import json
import subprocess
import sys

import numpy as np
import pytest

from uvmitosis.cli import main
from uvmitosis.pipeline.data import ingest


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    captured = capsys.readouterr()
    out = json.loads(captured.out.strip().splitlines()[-1]) if captured.out.strip() else None
    return code, out, captured.err


@pytest.fixture(scope="module")
def chain(tmp_path_factory):
    """synth -> make-targets -> train (1 epoch) once for the module."""
    root = tmp_path_factory.mktemp("cli")
    assert main(["synth", "--count", "10", "--seed", "2", "--out", str(root / "data")]) == 0
    manifest = root / "data" / "manifest.json"
    assert main(["make-targets", "--manifest", str(manifest), "--sigma", "3"]) == 0
    assert main(["train", "--manifest", str(manifest), "--out", str(root / "train"), "--epochs", "1",
                 "--depth", "2", "--base-f", "4", "--lr", "1e-3"]) == 0
    return root, manifest


class TestChain:
    def test_make_targets_recorded(self, chain):
        root, manifest = chain
        m = ingest(manifest)
        assert m.extra["targets"]["sigma"] == 3.0
        heat = np.load(m.resolve(m.entries[0].target_path))
        assert heat.shape == (2, 64, 64)

    def test_train_writes_split(self, chain):
        root, _ = chain
        split = json.loads((root / "train" / "split.json").read_text())
        assert (len(split["train"]), len(split["val"]), len(split["test"])) == (6, 2, 2)

    def test_infer_evaluate_report(self, chain, capsys):
        root, manifest = chain
        code, out, _ = run(capsys, "infer", "--manifest", manifest, "--checkpoint", root / "train/checkpoint.json",
                           "--out", root / "infer", "--radius", "8")
        assert code == 0 and out["images"] == 2
        code, ev, _ = run(capsys, "evaluate", "--manifest", manifest, "--detections", root / "infer/detections.json",
                          "--subset", "test", "--split-file", root / "train/split.json", "--radius", "8",
                          "--out", root / "eval")
        assert code == 0 and ev["f1"] == out["f1"]
        code, _, err = run(capsys, "report", "--metrics", root / "eval/metrics.json", "--out", root / "report.txt")
        assert code == 0
        assert "micro" in (root / "report.txt").read_text()

    def test_stain_normalize(self, chain, capsys):
        root, manifest = chain
        code, out, _ = run(capsys, "stain-normalize", "--manifest", manifest, "--out", root / "norm")
        assert code == 0 and out["images"] == 10
        m = ingest(root / "norm" / "manifest.json")
        assert len(m) == 10 and "stain_normalized" in m.extra

    def test_stain_normalize_to_image(self, chain, capsys):
        root, manifest = chain
        target = root / "data/images/synth_0003.png"
        code, out, _ = run(capsys, "stain-normalize", "--manifest", manifest, "--out", root / "norm2",
                           "--target-image", target)
        assert code == 0


class TestErrors:
    def test_missing_manifest(self, tmp_path, capsys):
        code, _, err = run(capsys, "make-targets", "--manifest", tmp_path / "nope.json")
        assert code == 1
        line = json.loads(err.strip().splitlines()[-1])
        assert line["type"] == "ManifestError" and "not found" in line["error"]

    def test_bad_value(self, tmp_path, capsys):
        code, _, err = run(capsys, "synth", "--count", "0", "--out", tmp_path)
        assert code == 1 and json.loads(err.strip())["type"] == "ValueError"

    def test_usage_error_exits_nonzero(self):
        with pytest.raises(SystemExit) as exc:
            main(["train"])
        assert exc.value.code != 0

    def test_console_script_module(self, tmp_path):
        proc = subprocess.run([sys.executable, "-m", "uvmitosis.cli", "report", "--metrics", str(tmp_path / "x")],
                              capture_output=True, text=True)
        assert proc.returncode == 1
        assert json.loads(proc.stderr.strip())["type"] == "FileNotFoundError"

    def test_inconsistent_report_rejected(self, tmp_path, capsys):
        (tmp_path / "m.json").write_text(json.dumps(
            {"mitosis": {"micro": {"tp": 1, "fp": 0, "fn": 0, "precision": 0.5, "recall": 1.0, "f1": 1.0}}}))
        code, _, err = run(capsys, "report", "--metrics", tmp_path / "m.json")
        assert code == 1 and "inconsistent" in err


class TestConfigAndEnv:
    def test_config_file_sets_defaults(self, tmp_path, capsys):
        (tmp_path / "c.json").write_text(json.dumps({"count": 3, "seed": 9}))
        code, out, _ = run(capsys, "synth", "--config", tmp_path / "c.json", "--out", tmp_path / "d")
        assert code == 0 and out["images"] == 3

    def test_flags_override_config(self, tmp_path, capsys):
        (tmp_path / "c.json").write_text(json.dumps({"count": 3}))
        _, out, _ = run(capsys, "synth", "--config", tmp_path / "c.json", "--count", "2", "--out", tmp_path / "d")
        assert out["images"] == 2

    def test_unknown_config_key(self, tmp_path, capsys):
        (tmp_path / "c.json").write_text(json.dumps({"epochs": 3}))
        code, _, err = run(capsys, "synth", "--config", tmp_path / "c.json")
        assert code == 1 and "unknown option" in err

    def test_env_output_dir(self, tmp_path, capsys, monkeypatch):
        monkeypatch.setenv("UVMITOSIS_OUTPUT_DIR", str(tmp_path / "runs"))
        code, out, _ = run(capsys, "synth", "--count", "1")
        assert code == 0
        assert out["manifest"] == str(tmp_path / "runs" / "synth" / "manifest.json")
