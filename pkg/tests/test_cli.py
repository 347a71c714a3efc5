import json
import re

import numpy as np
import pytest

from cmvfuse.cli import build_parser, config_keys, main

SMALL = ["--hidden_dim", "8", "--head_count", "2", "--kg_dim", "6",
         "--l_a", "1", "--l_d", "1", "--l_c", "1", "--l_s", "1"]


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    assert main(["synth", "--output_dir", str(out), "--size", "12", *SMALL]) == 0
    lines = (out / "corpus.jsonl").read_text().splitlines()
    (out / "train.jsonl").write_text("\n".join(lines[:8]) + "\n")
    (out / "dev.jsonl").write_text("\n".join(lines[8:]) + "\n")
    return out


def paths(d):
    return ["--train_path", str(d / "train.jsonl"), "--dev_path", str(d / "dev.jsonl"),
            "--embeddings_path", str(d / "embeddings.json"), "--kg_path", str(d / "kg.json"),
            "--vocab_path", str(d / "vocab.json")]


@pytest.mark.parametrize("command", ["build-graphs", "train", "eval", "ablate", "gradcheck"])
def test_help_lists_every_config_key(command, capsys):
    with pytest.raises(SystemExit):
        build_parser().parse_args([command, "--help"])
    text = capsys.readouterr().out
    for key in config_keys():
        assert f"--{key}" in text, key
    documented = set(re.findall(r"--([\w.-]+)", text))
    assert documented <= set(config_keys()) | {"help", "config", "single-worker", "verbose",
                                               "dump-trace", "dump-landmarks"}


def test_build_graphs_one_artifact_per_line_and_idempotent(synth_dir, tmp_path):
    outs = []
    for run in ("a", "b"):
        out = tmp_path / run
        assert main(["build-graphs", *paths(synth_dir), "--output_dir", str(out), *SMALL]) == 0
        outs.append(out)
    files = sorted(p.name for p in (outs[0] / "graphs").iterdir())
    assert len(files) == 8
    for name in files:
        assert (outs[0] / "graphs" / name).read_bytes() == (outs[1] / "graphs" / name).read_bytes()
    assert (outs[0] / "graph_summary.json").exists() and (outs[0] / "graph_summary.txt").exists()


def test_corrupt_line_exit_2(synth_dir, tmp_path, capsys):
    lines = (synth_dir / "corpus.jsonl").read_text().splitlines()
    lines[6] = lines[6][:-5]
    bad = tmp_path / "bad.jsonl"
    bad.write_text("\n".join(lines) + "\n")
    assert main(["build-graphs", "--train_path", str(bad), *SMALL]) == 2
    assert "line 7" in capsys.readouterr().err


def test_missing_file_exit_2(tmp_path, capsys):
    assert main(["train", "--train_path", str(tmp_path / "nope.jsonl"),
                 "--dev_path", str(tmp_path / "nope.jsonl"), *SMALL]) == 2


def test_config_file_and_flag_override(synth_dir, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"epochs": 3, "contrastive": {"gamma": 0.4}, "seed": 7}))
    out = tmp_path / "o"
    assert main(["train", "--config", str(cfg), "--epochs", "1", *paths(synth_dir),
                 "--output_dir", str(out), *SMALL]) == 0
    effective = json.loads((out / "effective_config.json").read_text())
    assert effective["epochs"] == 1 and effective["contrastive.gamma"] == 0.4 and effective["seed"] == 7


def test_train_eval_round_trip_with_dumps(synth_dir, tmp_path):
    out = tmp_path / "t"
    common = [*paths(synth_dir), "--epochs", "2", *SMALL]
    assert main(["train", *common, "--output_dir", str(out), "--dump-trace", "--dump-landmarks"]) == 0
    for name in ("checkpoint.npz", "epoch_log.json", "epoch_log.txt", "traces.jsonl", "landmarks.jsonl"):
        assert (out / name).exists(), name
    first = json.loads((out / "landmarks.jsonl").read_text().splitlines()[0])
    assert first["k"] == 1 and len(first["indices"]) == 1 and len(first["importance"]) == 9
    anchor = str(first["indices"][0])
    assert int(anchor) in first["positives"][anchor]["syn"]
    ev = tmp_path / "e"
    assert main(["eval", "--checkpoint", str(out / "checkpoint.npz"), *paths(synth_dir),
                 "--output_dir", str(ev)]) == 0
    report = json.loads((ev / "eval_report.json").read_text())
    log = json.loads((out / "epoch_log.json").read_text())
    best = log["epochs"][log["best_epoch"] - 1]["dev"]
    assert report["accuracy"] == best["accuracy"]


def test_rerun_identical(synth_dir, tmp_path):
    blobs = []
    for run in ("a", "b"):
        out = tmp_path / run
        assert main(["train", *paths(synth_dir), "--epochs", "2", *SMALL, "--output_dir", str(out)]) == 0
        blobs.append(((out / "checkpoint.npz").read_bytes(), (out / "epoch_log.json").read_bytes()))
    assert blobs[0] == blobs[1]


def test_eval_dimension_mismatch_exit_2(synth_dir, tmp_path, capsys):
    out = tmp_path / "t"
    assert main(["train", *paths(synth_dir), "--epochs", "1", *SMALL, "--output_dir", str(out)]) == 0
    code = main(["eval", "--checkpoint", str(out / "checkpoint.npz"), *paths(synth_dir),
                 "--hidden_dim", "16", "--head_count", "2"])
    assert code == 2
    assert "shape" in capsys.readouterr().err


def test_gradcheck_exit_0(tmp_path):
    out = tmp_path / "g"
    assert main(["gradcheck", "--gradcheck.max_elements", "150", "--output_dir", str(out)]) == 0
    report = json.loads((out / "gradcheck.json").read_text())
    assert report["passed"] and report["max_rel_error"] < 1e-3


def test_gradcheck_fails_with_impossible_tolerance(tmp_path):
    assert main(["gradcheck", "--gradcheck.max_elements", "40", "--gradcheck.tolerance", "1e-14"]) == 3


def test_ablate_emits_seven_plus_four_rows(synth_dir, tmp_path):
    out = tmp_path / "ab"
    assert main(["ablate", *paths(synth_dir), "--epochs", "1", *SMALL, "--output_dir", str(out)]) == 0
    rows = json.loads((out / "ablation.json").read_text())
    assert [r["table"] for r in rows] == ["views"] * 7 + ["losses"] * 4
    text = (out / "ablation.txt").read_text()
    assert len(text.splitlines()) == 2 + 11
