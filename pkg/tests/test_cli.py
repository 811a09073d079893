import csv
import json
import os
import subprocess
import sys

import numpy as np
import pytest

from siamese_eeg import cli, data
from siamese_eeg.checkpoint import load_checkpoint

SMALL = ["--iterations", "3", "--batch", "8"]


@pytest.fixture
def small_isf(tmp_path):
    """A 5-trials-per-class synthetic subject written through the CLI."""
    assert cli.main(["synth", "--out", str(tmp_path), "--trials-per-class", "5",
                     "--subject", "tiny", "--noise-sd", "0.5"]) == 0
    return tmp_path / "tiny.isf"


def test_defaults_follow_published_values():
    cfg = cli.build_config(cli.build_parser().parse_args(["train"]))
    t = cfg.train
    assert (t.margin, t.learning_rate, t.batch_size, t.iterations) == (0.5, 1e-4, 180, 1000)
    assert (cfg.knn_k, cfg.folds) == (5, 5)
    assert t.final_relu is True


def test_flags_override_json_override_defaults(tmp_path):
    conf = tmp_path / "c.json"
    conf.write_text(json.dumps({"seed": 4, "train": {"iterations": 7, "margin": 0.8},
                                "knn_k": 3, "synth": {"noise_sd": 0.2}}))
    parser = cli.build_parser()
    cfg = cli.build_config(parser.parse_args(["evaluate", "--config", str(conf)]))
    assert (cfg.train.iterations, cfg.train.margin, cfg.knn_k, cfg.seed) == (7, 0.8, 3, 4)
    assert cfg.train.seed == 4
    cfg = cli.build_config(parser.parse_args(
        ["evaluate", "--config", str(conf), "--iterations", "9", "--k", "1", "--seed", "6",
         "--final-relu", "off"]))
    assert (cfg.train.iterations, cfg.train.margin, cfg.knn_k) == (9, 0.8, 1)
    assert (cfg.seed, cfg.train.seed, cfg.synth.seed) == (6, 6, 6)
    assert cfg.train.final_relu is False
    assert cfg.synth.noise_sd == 0.2


def test_synth_default_and_determinism(tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.main(["synth", "--out", str(a), "--seed", "3"]) == 0
    assert cli.main(["synth", "--out", str(b), "--seed", "3"]) == 0
    assert "240 trials" in capsys.readouterr().out
    assert (a / "synthetic.isf").read_bytes() == (b / "synthetic.isf").read_bytes()
    assert len(data.load_trialset(a / "synthetic.isf")) == 240


def test_synth_invalid_frequency_exits_2(tmp_path, capsys):
    conf = tmp_path / "bad.json"
    freqs = [[4, 13], [6, 17], [8, 21], [10, 26], [12, 31], [15, 45]]
    conf.write_text(json.dumps({"synth": {"frequencies": freqs}}))
    assert cli.main(["synth", "--config", str(conf), "--out", str(tmp_path)]) == 2
    assert "45" in capsys.readouterr().err


def test_unknown_config_key_exits_2(tmp_path, capsys):
    conf = tmp_path / "bad.json"
    conf.write_text(json.dumps({"train": {"momentum": 0.9}}))
    assert cli.main(["train", "--config", str(conf)]) == 2
    assert "momentum" in capsys.readouterr().err


def test_validate_prints_summary(small_isf, capsys):
    assert cli.main(["validate", "--dataset", str(small_isf)]) == 0
    out = capsys.readouterr().out
    assert "tiny" in out and "5 5 5 5 5 5" in out
    assert "warning: class 0 (up) has 5 trials" in out


def test_malformed_inputs_exit_2(tmp_path, capsys):
    bad = tmp_path / "bad.isf"
    bad.write_bytes(b"ISF1\x01\x00")
    assert cli.main(["validate", "--dataset", str(bad)]) == 2
    assert "byte offset" in capsys.readouterr().err
    assert cli.main(["train", "--dataset", str(tmp_path / "missing.isf")]) == 2
    assert cli.main(["train"]) == 2
    assert cli.main(["train", "--config", str(tmp_path / "nope.json")]) == 2


def test_train_writes_checkpoint_and_loss_csv(small_isf, tmp_path):
    out1, out2 = tmp_path / "t1", tmp_path / "t2"
    for out in (out1, out2):
        assert cli.main(["train", "--dataset", str(small_isf), "--out", str(out), "--seed", "1",
                         *SMALL]) == 0
    assert (out1 / "model.smne").read_bytes() == (out2 / "model.smne").read_bytes()
    rows = list(csv.reader((out1 / "loss.csv").open()))
    assert rows[0] == ["iteration", "loss"]
    assert len(rows) - 1 == 3
    params, state = load_checkpoint(out1 / "model.smne")
    assert state.t == 3


def test_train_divergence_exits_3(tmp_path, capsys):
    ts = data.synth_generate(data.SynthConfig(trials_per_class=2))
    for t in ts.trials:
        t.data = t.data * 1e160
    data.save_trialset(ts, tmp_path / "huge.isf")
    code = cli.main(["train", "--dataset", str(tmp_path / "huge.isf"), "--out", str(tmp_path),
                     *SMALL])
    assert code == 3
    assert "iteration" in capsys.readouterr().err


def test_embed_writes_csv(small_isf, tmp_path):
    assert cli.main(["train", "--dataset", str(small_isf), "--out", str(tmp_path), *SMALL]) == 0
    assert cli.main(["embed", "--dataset", str(small_isf), "--checkpoint",
                     str(tmp_path / "model.smne"), "--out", str(tmp_path)]) == 0
    rows = list(csv.reader((tmp_path / "tiny_embeddings.csv").open()))
    assert rows[0] == ["trial", "label"] + [f"e{i}" for i in range(8)]
    assert len(rows) == 31
    assert cli.main(["embed", "--dataset", str(small_isf), "--out", str(tmp_path)]) == 2


def test_preprocess_raw_recording(tmp_path):
    fs = 1024
    t = np.arange(10 * fs) / fs
    trials = [data.Trial(np.tile(np.sin(2 * np.pi * 10 * t), (6, 1)), c) for c in range(6)]
    raw = data.TrialSet("raw", fs, list(data.CHANNEL_NAMES), trials)
    (tmp_path / "in").mkdir()
    data.save_trialset(raw, tmp_path / "in" / "raw.isf")
    assert cli.main(["preprocess", "--dataset", str(tmp_path / "in" / "raw.isf"),
                     "--out", str(tmp_path / "pp")]) == 0
    ts = data.load_trialset(tmp_path / "pp" / "raw.isf", warn=False)
    assert ts.sampling_rate == 128
    assert ts.X.shape == (6, 6, 512)


def test_evaluate_report_layout(small_isf, tmp_path, capsys):
    assert cli.main(["evaluate", "--dataset", str(small_isf), "--out", str(tmp_path),
                     "--name", "run", *SMALL]) == 0
    text = capsys.readouterr().out
    assert (tmp_path / "report.txt").read_text() == text
    assert "tiny" in text and "±" in text
    assert "Averaged confusion matrix" in text
    assert "Recall and F1-score per class" in text
    doc = json.loads((tmp_path / "report.json").read_text())
    assert doc["name"] == "run"
    assert np.array(doc["summary"]["averaged_confusion"]).shape == (6, 6)
    assert len(doc["subjects"][0]["fold_accuracies"]) == 5


def test_compare_identical_reports_fails_cleanly(small_isf, tmp_path, capsys):
    assert cli.main(["evaluate", "--dataset", str(small_isf), "--out", str(tmp_path), *SMALL]) == 0
    report = str(tmp_path / "report.json")
    assert cli.main(["compare", report, report]) == 2
    assert "zero" in capsys.readouterr().err
    assert cli.main(["compare", report]) == 2


def test_log_level_from_environment(small_isf, tmp_path):
    env = dict(os.environ, SIAMESE_LOG="INFO")
    proc = subprocess.run([sys.executable, "-m", "siamese_eeg", "evaluate", "--dataset",
                           str(small_isf), "--out", str(tmp_path), *SMALL],
                          env=env, capture_output=True, text=True, check=True)
    assert "fold 1/5 accuracy" in proc.stderr


@pytest.mark.slow
def test_three_snr_levels_differ_significantly(tmp_path, capsys):
    reports = []
    for noise in ("0.25", "1.0", "4.0"):
        d = tmp_path / noise
        assert cli.main(["synth", "--out", str(d), "--noise-sd", noise]) == 0
        assert cli.main(["evaluate", "--dataset", str(d / "synthetic.isf"), "--out", str(d),
                         "--iterations", "20", "--name", f"noise {noise}"]) == 0
        reports.append(str(d / "report.json"))
    capsys.readouterr()
    assert cli.main(["compare", *reports, "--out", str(tmp_path)]) == 0
    text = capsys.readouterr().out
    assert "Method" in text and "t-value" in text and "p-value" in text
    stat = json.loads((tmp_path / "compare.json").read_text())
    assert stat["anova"]["p"] < 0.05
