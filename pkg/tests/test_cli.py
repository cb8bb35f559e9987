import json

import numpy as np
import pytest

from signnet.checkpoint import read_checkpoint
from signnet.cli import EXIT_DATA, EXIT_OK, EXIT_USAGE, EXIT_VERIFY, load_run_config, main
from signnet.data import export_gtsrb_layout, synth_dataset
from signnet.network import NetworkSpec, miniature_spec, table1_spec


def train(tmp_path, *extra, epochs=1, out="run"):
    return main(["train", "--preset", "miniature", "--synthetic", "5", "--epochs", str(epochs),
                 "--out", str(tmp_path / out), *extra])


def tensors_of(path):
    return read_checkpoint(path)[2]


def test_train_writes_checkpoint_and_log(tmp_path, capsys):
    assert train(tmp_path, epochs=2) == EXIT_OK
    out = capsys.readouterr().out
    assert "learning_rate=0.00032" in out and "weight_decay=0.0918" in out and "batch_size=20" in out
    lines = (tmp_path / "run" / "train_log.jsonl").read_text().splitlines()
    assert [json.loads(l)["epoch"] for l in lines] == [1, 2]
    assert len(json.loads(lines[0])["losses"]) == 13  # 250 images in batches of 20
    _, meta, _ = read_checkpoint(tmp_path / "run" / "checkpoint.sgnc")
    assert meta["epoch"] == 2 and meta["step"] == 26 and meta["data"]["kind"] == "synthetic"


def test_zero_epochs_writes_initial_checkpoint_without_data(tmp_path, monkeypatch):
    monkeypatch.delenv("SIGNNET_GTSRB_ROOT", raising=False)
    assert main(["train", "--preset", "miniature", "--epochs", "0", "--out", str(tmp_path)]) == EXIT_OK
    _, meta, tensors = read_checkpoint(tmp_path / "checkpoint.sgnc")
    assert meta["step"] == 0 and not any(k.startswith("velocity/") for k in tensors)


def test_resume_matches_uninterrupted_run(tmp_path):
    assert train(tmp_path, epochs=2, out="straight") == EXIT_OK
    assert train(tmp_path, epochs=1, out="split") == EXIT_OK
    ckpt = tmp_path / "split" / "checkpoint.sgnc"
    assert main(["train", "--resume", str(ckpt), "--epochs", "2", "--out", str(tmp_path / "split")]) == EXIT_OK
    a, b = tensors_of(tmp_path / "straight" / "checkpoint.sgnc"), tensors_of(ckpt)
    assert a.keys() == b.keys()
    for k in a:
        np.testing.assert_array_equal(a[k], b[k])


def test_eval_reports_and_leaves_checkpoint_untouched(tmp_path, capsys):
    assert train(tmp_path) == EXIT_OK
    ckpt = tmp_path / "run" / "checkpoint.sgnc"
    before = ckpt.read_bytes()
    assert main(["eval", "--checkpoint", str(ckpt), "--out", str(tmp_path / "ev")]) == EXIT_OK
    assert ckpt.read_bytes() == before
    assert "overall top-1" in capsys.readouterr().out
    rows = [json.loads(l) for l in (tmp_path / "ev" / "eval_report.jsonl").read_text().splitlines()]
    assert rows[0]["kind"] == "overall" and rows[0]["samples"] == 125
    assert (tmp_path / "ev" / "eval_report.txt").exists()


def test_eval_refuses_mismatched_network(tmp_path):
    assert train(tmp_path) == EXIT_OK
    ckpt = tmp_path / "run" / "checkpoint.sgnc"
    assert main(["eval", "--checkpoint", str(ckpt), "--preset", "toy", "--out", str(tmp_path)]) == EXIT_VERIFY


def test_corrupt_checkpoint_is_verification_failure(tmp_path):
    bad = tmp_path / "bad.sgnc"
    bad.write_bytes(b"SGNCKPT\0" + bytes(100))
    assert main(["eval", "--checkpoint", str(bad), "--synthetic", "5", "--out", str(tmp_path)]) == EXIT_VERIFY


def test_eval_on_exported_gtsrb_layout(tmp_path):
    export_gtsrb_layout(synth_dataset(5, 2, seed=9, size=12), tmp_path / "g", "test")
    assert train(tmp_path) == EXIT_OK
    args = ["eval", "--checkpoint", str(tmp_path / "run" / "checkpoint.sgnc"), "--data-root", str(tmp_path / "g"),
            "--out", str(tmp_path / "ev")]
    assert main(args) == EXIT_OK
    assert json.loads((tmp_path / "ev" / "eval_report.jsonl").read_text().splitlines()[0])["samples"] == 10


def test_exit_codes_for_usage_and_data_errors(tmp_path, monkeypatch):
    monkeypatch.delenv("SIGNNET_GTSRB_ROOT", raising=False)
    assert main([]) == EXIT_USAGE
    assert main(["train", "--preset", "nope", "--epochs", "1"]) == EXIT_USAGE
    assert main(["train", "--preset", "miniature", "--epochs", "-1"]) == EXIT_USAGE
    assert main(["train", "--preset", "miniature", "--epochs", "1", "--out", str(tmp_path)]) == EXIT_USAGE
    missing = ["train", "--preset", "miniature", "--epochs", "1", "--data-root", str(tmp_path / "none"),
               "--out", str(tmp_path)]
    assert main(missing) == EXIT_DATA
    # 8 synthetic classes cannot feed a 5-way classifier
    assert train(tmp_path, "--synthetic", "8") == EXIT_DATA


def test_config_file_handling(tmp_path):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"network": "miniature", "learning_rate": 0.001}))
    spec, overrides = load_run_config(cfg)
    assert spec == miniature_spec() and overrides == {"learning_rate": 0.001}
    cfg.write_text(json.dumps({"lr": 0.1}))
    assert main(["train", "--config", str(cfg), "--epochs", "0", "--out", str(tmp_path)]) == EXIT_USAGE
    cfg.write_text("{")
    assert main(["train", "--config", str(cfg), "--epochs", "0", "--out", str(tmp_path)]) == EXIT_USAGE
    spec_file = tmp_path / "net.json"
    miniature_spec().save(spec_file)
    assert load_run_config(spec_file) == (miniature_spec(), {})


def test_config_overrides_reach_checkpoint(tmp_path):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"network": "miniature", "weight_decay": 0.0}))
    assert main(["train", "--config", str(cfg), "--epochs", "0", "--out", str(tmp_path)]) == EXIT_OK
    assert read_checkpoint(tmp_path / "checkpoint.sgnc")[1]["sgd"]["weight_decay"] == 0.0


def test_dump_spec_round_trip(tmp_path):
    out = tmp_path / "full.json"
    assert main(["dump-spec", "--preset", "full", "--out", str(out)]) == EXIT_OK
    assert NetworkSpec.load(out) == table1_spec()


def test_params_audit(tmp_path, capsys):
    out = tmp_path / "ledger.json"
    assert main(["params", "--out", str(out)]) == EXIT_OK
    text = capsys.readouterr().out
    assert "mIncept(5a)" in text and "MISMATCH" in text
    ledger = json.loads(out.read_text())
    assert ledger["depth"] == 21
    # 5a disagrees with the table and carries no explanatory note, so a strict audit fails
    assert main(["params", "--strict"]) == EXIT_VERIFY
    assert main(["params", "--preset", "toy", "--strict"]) == EXIT_OK


@pytest.mark.parametrize("scope", ["op", "layer"])
def test_gradcheck_verb(scope, capsys):
    assert main(["gradcheck", "--scope", scope]) == EXIT_OK
    assert "groups below 0.0001" in capsys.readouterr().out
