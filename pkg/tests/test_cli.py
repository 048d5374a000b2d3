import hashlib
import json

import pytest

from treelabel.cli import main
from treelabel.datagen import read_jsonl, read_vocab


def run(argv):
    return main([str(a) for a in argv])


@pytest.fixture
def synth_paths(tmp_path):
    data = tmp_path / "train.jsonl"
    vocab = tmp_path / "vocab.txt"
    code = run(
        ["synth", "--output", data, "--vocab", vocab, "--labels", "3",
         "--examples", "60", "--seed", "7", "--sentence-min", "6",
         "--sentence-max", "10", "--vocab-size", "40"]
    )
    assert code == 0
    return data, vocab


def test_synth_writes_dataset_and_vocab(synth_paths):
    data, vocab = synth_paths
    examples = read_jsonl(data)
    assert len(examples) == 60
    assert len(read_vocab(vocab)) == 40
    assert all(ex.gold_labels for ex in examples)


def test_synth_poison_adds_fraction(tmp_path):
    data = tmp_path / "p.jsonl"
    code = run(
        ["synth", "--output", data, "--labels", "2", "--examples", "50",
         "--seed", "1", "--poison", "0.2"]
    )
    assert code == 0
    examples = read_jsonl(data)
    assert len(examples) == 60
    poisoned = [ex for ex in examples if ex.shortcut is not None]
    assert len(poisoned) == 10
    vocab = read_vocab(str(data) + ".vocab")
    assert "#0" in vocab and "#7" in vocab


def test_synth_missing_output_is_usage_error(capsys):
    with pytest.raises(SystemExit) as err:
        run(["synth", "--labels", "2"])
    assert err.value.code == 2


def test_synth_bad_config_exits_2(tmp_path):
    code = run(
        ["synth", "--output", tmp_path / "x.jsonl", "--labels", "0"]
    )
    assert code == 2


def train_args(data, vocab, ckpt, extra=()):
    return [
        "train", "--dataset", data, "--vocab", vocab, "--checkpoint", ckpt,
        "--epochs", "2", "--dim", "6", "--hidden", "8", "--seed", "3",
        "--batch-size", "8", *extra,
    ]


def test_train_eval_trace_round_trip(tmp_path, synth_paths, capsys):
    data, vocab = synth_paths
    ckpt = tmp_path / "model.ckpt"
    log = tmp_path / "train.log"
    assert run(train_args(data, vocab, ckpt, ["--log", log])) == 0
    assert ckpt.exists()
    assert "epoch 1 loss" in log.read_text()
    report = tmp_path / "report.json"
    code = run(
        ["eval", "--dataset", data, "--vocab", vocab, "--checkpoint", ckpt,
         "--buckets", "2,5", "--report", report]
    )
    assert code == 0
    doc = json.loads(report.read_text())
    assert "sentence" in doc and "span_attribution" in doc
    assert set(doc["span_attribution"]["buckets"]) == {"[0,2)", "[2,5)", "[5,inf)"}
    tokens = read_jsonl(data)[0].tokens[:3]
    code = run(["trace", "--checkpoint", ckpt, *tokens])
    out = capsys.readouterr().out
    assert code == 0
    assert "yield:" in out and "frontier:" in out
    assert f"(1,{len(tokens)})" in out


def test_train_same_seed_same_checkpoint_hash(tmp_path, synth_paths):
    data, vocab = synth_paths
    hashes = []
    for name in ("a.ckpt", "b.ckpt"):
        ckpt = tmp_path / name
        assert run(train_args(data, vocab, ckpt)) == 0
        hashes.append(hashlib.sha256(ckpt.read_bytes()).hexdigest())
    assert hashes[0] == hashes[1]


def test_train_full_permutation_cap_violation_exits_2(tmp_path, synth_paths):
    data, vocab = synth_paths
    code = run(
        train_args(data, vocab, tmp_path / "m.ckpt",
                   ["--objective", "full_permutation"])
        + ["--config", str(_cap_config(tmp_path))]
    )
    assert code == 2


def _cap_config(tmp_path):
    path = tmp_path / "cap.json"
    path.write_text('{"full_permutation_cap": 0}')
    return path


def test_config_file_supplies_defaults_flags_win(tmp_path):
    config = tmp_path / "config.json"
    config.write_text(json.dumps({"examples": 25, "labels": 2, "seed": 5}))
    data = tmp_path / "c.jsonl"
    assert run(["synth", "--output", data, "--config", config]) == 0
    assert len(read_jsonl(data)) == 25
    data2 = tmp_path / "c2.jsonl"
    assert run(
        ["synth", "--output", data2, "--config", config, "--examples", "10"]
    ) == 0
    assert len(read_jsonl(data2)) == 10


def test_eval_checkpoint_vocab_mismatch_exits_1(tmp_path, synth_paths):
    data, vocab = synth_paths
    ckpt = tmp_path / "m.ckpt"
    assert run(train_args(data, vocab, ckpt)) == 0
    other_vocab = tmp_path / "other.txt"
    other_vocab.write_text("tok0\ntok1\n")
    code = run(
        ["eval", "--dataset", data, "--vocab", other_vocab, "--checkpoint", ckpt]
    )
    assert code == 1


def test_trace_unknown_token_exits_1(tmp_path, synth_paths):
    data, vocab = synth_paths
    ckpt = tmp_path / "m.ckpt"
    assert run(train_args(data, vocab, ckpt)) == 0
    assert run(["trace", "--checkpoint", ckpt, "definitely-not-a-token"]) == 1


def test_tree_source_file_requires_trees(tmp_path, synth_paths):
    data, vocab = synth_paths
    code = run(
        train_args(data, vocab, tmp_path / "m.ckpt", ["--tree", "file"])
    )
    assert code == 1  # dataset error: no trees recorded


def test_synth_with_embedded_trees_then_file_source(tmp_path):
    data = tmp_path / "t.jsonl"
    vocab = tmp_path / "t.vocab"
    assert run(
        ["synth", "--output", data, "--vocab", vocab, "--labels", "2",
         "--examples", "20", "--seed", "2", "--trees", "random"]
    ) == 0
    examples = read_jsonl(data)
    assert all(ex.tree for ex in examples)
    ckpt = tmp_path / "m.ckpt"
    assert run(train_args(data, vocab, ckpt, ["--tree", "file"])) == 0


def test_check_small_run_passes(tmp_path, capsys):
    report = tmp_path / "check.json"
    code = run(
        ["check", "--seeds", "25", "--gradient-cases", "5",
         "--model-cases", "4", "--report", report]
    )
    out = capsys.readouterr().out
    assert code == 0
    assert "all suites passed" in out
    rows = json.loads(report.read_text())
    assert all(row["passed"] for row in rows)


def test_check_injected_fault_exits_1():
    code = run(
        ["check", "--seeds", "10", "--gradient-cases", "2",
         "--model-cases", "2", "--inject-fault"]
    )
    assert code == 1


def test_mil_cli_requires_single_label_data(tmp_path):
    data = tmp_path / "m.jsonl"
    vocab = tmp_path / "m.vocab"
    assert run(
        ["synth", "--output", data, "--vocab", vocab, "--labels", "2",
         "--examples", "30", "--seed", "4", "--multi-label-prob", "0.9"]
    ) == 0
    code = run(
        train_args(data, vocab, tmp_path / "m.ckpt", ["--model", "mil"])
    )
    assert code == 2
