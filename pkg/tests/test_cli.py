import json
import subprocess
import sys

import pytest

from cassava_bench.cli import main


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    spec = {"n_samples": 60, "image_side": 24, "seed": 1}
    (root / "synth.json").write_text(json.dumps(spec))
    assert main(["synth", str(root / "synth.json"), str(root / "data")]) == 0
    cfg = {"manifest": "data/manifest.csv", "out": "runs", "architectures": ["TinyCNN"],
           "pretrained": False, "max_epochs": 2, "plots": False}
    (root / "cfg.json").write_text(json.dumps(cfg))
    return root


def test_eda(workspace, capsys, tmp_path):
    assert main(["eda", str(workspace / "data/manifest.csv"), "--verify", "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "CMD" in out and "0 missing or unreadable images" in out
    assert (tmp_path / "distribution.txt").is_file()
    assert (tmp_path / "plots/class_distribution.png").is_file()


def test_split_train_eval_compare(workspace, capsys):
    cfg = str(workspace / "cfg.json")
    assert main(["split", cfg]) == 0
    assert (workspace / "runs/TinyCNN/train.txt").is_file()
    assert main(["train", "--config", cfg, "--arch", "TinyCNN"]) == 0
    assert "weighted avg" in capsys.readouterr().out
    assert main(["eval", cfg, "--arch", "TinyCNN"]) == 0
    assert main(["compare", str(workspace / "runs"), "--out", str(workspace / "cmp")]) == 0
    out = capsys.readouterr().out
    assert "TinyCNN" in out
    assert (workspace / "cmp/comparison.csv").read_text().startswith("architecture,")


def test_seed_and_out_overrides(workspace):
    assert main(["split", str(workspace / "cfg.json"), "--seed", "7", "--out", str(workspace / "alt")]) == 0
    prov = json.loads((workspace / "alt/TinyCNN/split.json").read_text())
    assert prov["seed"] == 7


@pytest.mark.parametrize(
    "argv, code",
    [
        (["eda", "/nonexistent/manifest.csv"], 2),
        (["split"], 2),
        (["compare", "/nonexistent"], 2),
        (["train", "/nonexistent.json"], 2),
    ],
)
def test_error_exit_codes(argv, code, capsys):
    assert main(argv) == code
    assert capsys.readouterr().err.startswith("error:")


def test_unknown_arch_exit_code(workspace):
    assert main(["train", str(workspace / "cfg.json"), "--arch", "AlexNet"]) != 0


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "cassava_bench", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    for sub in ("eda", "synth", "split", "train", "eval", "compare"):
        assert sub in res.stdout
