import json
import subprocess
import sys

import pytest

from socialmae.cli import main

from conftest import experiment_doc


def _write(tmp_path, **kw):
    path = tmp_path / "exp.json"
    path.write_text(json.dumps(experiment_doc(tmp_path / "run", **kw), indent=2))
    return str(path)


def test_full_command_sequence(tmp_path, capsys):
    cfg = _write(tmp_path, epochs=1)
    assert main(["synth", "--config", cfg]) == 0
    assert main(["synth", "--config", cfg, "--verify"]) == 0
    assert "verified train_data" in capsys.readouterr().out
    assert main(["pretrain", "--config", cfg]) == 0
    pre = str(tmp_path / "run" / "pretrain.pt")
    assert main(["finetune", "--config", cfg, "--checkpoint", pre]) == 0
    capsys.readouterr()
    assert main(["eval", "--config", cfg]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["task"] == "group" and "mAP" in report["metrics"]


def test_seed_and_out_overrides(tmp_path):
    cfg = _write(tmp_path, epochs=1)
    assert main(["pretrain", "--config", cfg, "--seed", "7", "--out", str(tmp_path / "other")]) == 0
    from socialmae.checkpoint import load_checkpoint

    saved = load_checkpoint(tmp_path / "other" / "pretrain.pt")
    assert saved["extra"]["config"]["seed"] == 7
    assert not (tmp_path / "run").exists()


def test_finetune_without_source_exits_2(tmp_path, capsys):
    cfg = _write(tmp_path, epochs=1)
    assert main(["finetune", "--config", cfg]) == 2
    assert "--from-scratch" in capsys.readouterr().err
    assert main(["finetune", "--config", cfg, "--from-scratch"]) == 0


def test_bad_config_exits_2(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"task": "group"}))
    assert main(["pretrain", "--config", str(path)]) == 2
    assert "seed" in capsys.readouterr().err
    assert main(["pretrain", "--config", str(tmp_path / "missing.json")]) == 2


def test_ablate_without_section_exits_2(tmp_path):
    assert main(["ablate", "--config", _write(tmp_path, epochs=1)]) == 2


def test_unknown_command_is_usage_error(tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["train", "--config", "x.json"])
    assert exc.value.code == 2


def test_module_entry_point(tmp_path):
    cfg = _write(tmp_path, epochs=1)
    proc = subprocess.run(
        [sys.executable, "-m", "socialmae.cli", "synth", "--config", cfg], capture_output=True, text=True
    )
    assert proc.returncode == 0, proc.stderr
    assert "wrote train_data" in proc.stdout
