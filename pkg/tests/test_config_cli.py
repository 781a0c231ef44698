import csv
import json

import numpy as np
import pytest
import yaml

from pairssl import cli, sslcore
from pairssl.config import PRESETS, TrainConfig, parse_config, resolve_config
from pairssl.errors import ConfigError
from pairssl.trainer import read_metrics

TINY = {
    "preset": "toy",
    "num_classes": 2,
    "n_per_class": 30,
    "test_per_class": 5,
    "image_size": 16,
    "labels_per_class": 3,
    "validation_size": 8,
    "unlabeled_size": 30,
    "batch_size": 4,
    "k_weak": 2,
    "filters": [4],
    "hidden": 8,
    "total_steps": 4,
    "eval_every": 2,
}


@pytest.fixture
def tiny_file(tmp_path):
    path = tmp_path / "tiny.yaml"
    path.write_text(yaml.safe_dump(TINY))
    return path


# ---------------------------------------------------------------- config


def test_toy_preset_defaults():
    cfg = resolve_config("toy")
    for key, value in PRESETS["toy"].items():
        got = getattr(cfg, key)
        assert (list(got) if isinstance(got, tuple) else got) == value, key
    assert (cfg.tau_c, cfg.tau_s, cfg.temperature) == (0.95, 0.9, 0.5)


def test_library_defaults():
    cfg = TrainConfig()
    assert (cfg.tau_c, cfg.tau_s, cfg.temperature, cfg.ema_decay, cfg.batch_size) == (0.95, 0.9, 0.5, 0.999, 64)


def test_flag_beats_file(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text("tau_c: 0.95\n")
    args = cli.build_parser().parse_args(["train", "--config", str(path), "--tau-c", "0.75"])
    assert cli.config_from_args(args).tau_c == 0.75
    assert parse_config(path, "toy").tau_c == 0.95


def test_set_nested_override():
    args = cli.build_parser().parse_args(["train", "--set", "strong_aug.erase_p=0", "--set", "k_weak=3"])
    cfg = cli.config_from_args(args)
    assert cfg.strong_aug.erase_p == 0.0 and cfg.k_weak == 3


@pytest.mark.parametrize(
    "over",
    [
        {"tau_c": 1.5},
        {"tau_s": 0.0},
        {"bogus": 1},
        {"batch_size": "big"},
        {"batch_size": 2.5},
        {"temperature": 0},
        {"labels_per_class": 1000},
        {"strong_aug": {"nope": 1}},
        {"optimizer": "rmsprop"},
    ],
)
def test_bad_config_rejected(over):
    with pytest.raises(ConfigError):
        resolve_config("toy", overrides=over)


def test_config_round_trip_and_digest():
    cfg = resolve_config("toy", overrides={"lambda_p": 0.0})
    again = TrainConfig.from_dict(json.loads(json.dumps(cfg.to_dict())))
    assert again == cfg and again.digest() == cfg.digest()
    assert cfg.digest() != resolve_config("toy").digest()


def test_unknown_preset():
    with pytest.raises(ConfigError):
        resolve_config("imagenet")


def test_manifest_round_trip():
    m = cli.RunManifest({"a": 1}, "0.1", "t0", "t1", "completed", {"metrics": "metrics.csv"}, {"best_val": 0.5})
    assert cli.RunManifest.from_json(m.to_json()) == m


# ---------------------------------------------------------------- commands


def test_exit_code_for_bad_flag(capsys):
    assert cli.main(["train", "--tau-c", "1.5"]) == cli.EXIT_CONFIG
    assert cli.main(["train", "--no-such-flag"]) == cli.EXIT_CONFIG
    assert cli.main(["ablate"]) == cli.EXIT_CONFIG  # empty grid


def test_train_writes_artifacts(tiny_file, tmp_path, capsys):
    out = tmp_path / "run"
    assert cli.main(["train", "--config", str(tiny_file), "--out", str(out)]) == 0
    line = capsys.readouterr().out.strip().splitlines()[-1]
    assert line.startswith("best_val=") and " test=" in line and " convergence_step=" in line
    for name in ("manifest.json", "metrics.csv", "checkpoints/best.ckpt", "checkpoints/last.ckpt"):
        assert (out / name).is_file(), name
    manifest = cli.RunManifest.from_json((out / "manifest.json").read_text())
    assert manifest.status == "completed"
    # the manifest alone reproduces the run
    again = tmp_path / "again"
    cfg_file = tmp_path / "from_manifest.yaml"
    cfg_file.write_text(yaml.safe_dump(manifest.config))
    assert cli.main(["train", "--config", str(cfg_file), "--out", str(again)]) == 0
    assert (again / "metrics.csv").read_bytes() == (out / "metrics.csv").read_bytes()


def _fail_after(monkeypatch, n_evals):
    from pairssl import trainer

    calls = {"n": 0}
    real = trainer.evaluate

    def flaky(*a, **k):
        calls["n"] += 1
        if calls["n"] > n_evals:
            raise RuntimeError("boom")
        return real(*a, **k)

    monkeypatch.setattr(trainer, "evaluate", flaky)


def test_resume_continues_numbering(tiny_file, tmp_path, monkeypatch, capsys):
    full = tmp_path / "full"
    assert cli.main(["train", "--config", str(tiny_file), "--out", str(full)]) == 0
    out = tmp_path / "run"
    with monkeypatch.context() as m:
        _fail_after(m, 4)  # val+test at steps 0 and 2, then dies at step 4
        assert cli.main(["train", "--config", str(tiny_file), "--out", str(out)]) == cli.EXIT_RUNTIME
    ckpt = out / "checkpoints" / "last.ckpt"
    assert [r.step for r in read_metrics(out / "metrics.csv")] == [0, 2]
    assert cli.main(["train", "--resume", str(ckpt)]) == 0
    assert [r.step for r in read_metrics(out / "metrics.csv")] == [0, 2, 4]
    assert (out / "metrics.csv").read_bytes() == (full / "metrics.csv").read_bytes()
    # a checkpoint only resumes the config that wrote it
    assert cli.main(["train", "--config", str(tiny_file), "--total-steps", "8", "--resume", str(ckpt)]) == 1


def test_interrupted_run_leaves_parseable_prefix(tiny_file, tmp_path, monkeypatch, capsys):
    _fail_after(monkeypatch, 4)
    out = tmp_path / "run"
    assert cli.main(["train", "--config", str(tiny_file), "--out", str(out)]) == cli.EXIT_RUNTIME
    rows = read_metrics(out / "metrics.csv")
    assert [r.step for r in rows] == [0, 2]
    assert cli.RunManifest.from_json((out / "manifest.json").read_text()).status == "failed"


def test_eval_command(tiny_file, tmp_path, capsys):
    out = tmp_path / "run"
    cli.main(["train", "--config", str(tiny_file), "--out", str(out)])
    capsys.readouterr()
    assert cli.main(["eval", str(out / "checkpoints" / "best.ckpt")]) == 0
    text = capsys.readouterr().out
    assert "val_acc=" in text and "test_acc=" in text


def _read(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_ablate_two_cells(tiny_file, tmp_path, capsys):
    out = tmp_path / "abl"
    argv = ["ablate", "--config", str(tiny_file), "--grid", "lambda_p=0,150", "--out", str(out)]
    assert cli.main(argv) == 0
    rows = _read(out / "results.csv")
    assert [r["lambda_p"] for r in rows] == ["0", "150"]
    assert all(r["n_seeds"] == "1" for r in rows)


def test_ablate_threshold_grid_and_stats(tiny_file, tmp_path, capsys):
    out = tmp_path / "abl"
    argv = [
        "ablate", "--config", str(tiny_file), "--set", "total_steps=2",
        "--grid", "tau_c=0.95,0.75", "--grid", "tau_s=0.9,0.7", "--seeds", "0,1,2", "--out", str(out),
    ]
    assert cli.main(argv) == 0
    rows = _read(out / "results.csv")
    assert [(r["tau_c"], r["tau_s"]) for r in rows] == [("0.95", "0.9"), ("0.95", "0.7"), ("0.75", "0.9"), ("0.75", "0.7")]
    for col in ("best_val_mean", "best_val_std", "pair_pass_ratio_mean", "pair_pass_ratio_std"):
        assert col in rows[0]
    runs = _read(out / "runs.csv")
    assert len(runs) == 12
    vals = [float(r["best_val"]) for r in runs if r["cell"] == "0"]
    assert float(rows[0]["best_val_mean"]) == pytest.approx(np.mean(vals))
    assert float(rows[0]["best_val_std"]) == pytest.approx(np.std(vals, ddof=1))


def test_verify_passes(capsys):
    assert cli.main(["verify", "--samples", "2000", "--grad-seeds", "1"]) == 0
    out = capsys.readouterr().out
    assert "FAIL" not in out and out.count("PASS") >= 4


def test_verify_catches_similarity_without_roots(monkeypatch, capsys):
    def no_roots(p, q):
        return np.sum(np.asarray(p) * np.asarray(q), axis=-1)

    monkeypatch.setattr(sslcore, "bhattacharyya_sim", no_roots)
    assert cli.main(["verify", "--samples", "2000", "--grad-seeds", "1"]) == cli.EXIT_PROPERTY
    out = capsys.readouterr().out
    assert "FAIL" in out and "counterexample" in out
    assert "p" in out and "q" in out and "tau" in out


def test_verify_bad_samples():
    assert cli.main(["verify", "--samples", "3"]) == cli.EXIT_CONFIG
