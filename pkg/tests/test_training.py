import numpy as np
import pytest

from treelabel.datagen import Example
from treelabel.labels import LabelVocabulary
from treelabel.model import init_model
from treelabel.trees import build_balanced_tree
from treelabel.training import TrainConfig, train

TOKENS = [f"v{i}" for i in range(6)]
VOCAB = LabelVocabulary(("A", "B"))


def tiny_setup(kind="symbolic", seed=0):
    params = init_model(TOKENS, VOCAB, 6, 8, seed, kind)
    examples = [
        Example(["v0", "v1"], frozenset(["A"])),
        Example(["v2", "v3", "v4"], frozenset(["B"])),
        Example(["v0", "v5"], frozenset(["A", "B"])),
    ]
    trees = [build_balanced_tree(len(ex.tokens)) for ex in examples]
    return params, examples, trees


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(objective="nope")
    with pytest.raises(ValueError):
        TrainConfig(epochs=0)
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=-1.0)
    with pytest.raises(ValueError):
        TrainConfig(warmup_epochs=-1)


def test_memorizes_single_leaf_example():
    params = init_model(TOKENS, VOCAB, 8, 8, seed=1)
    ex = Example(["v0"], frozenset(["A"]))
    tree = build_balanced_tree(1)
    cfg = TrainConfig(learning_rate=0.05, epochs=200, batch_size=1, seed=0)
    result = train(params, [ex], [tree], cfg)
    assert result.epoch_losses[-1] < 0.01
    assert all(l >= 0.0 for l in result.epoch_losses)


def test_identical_seeds_reproduce_loss_traces_and_params():
    results = []
    for _ in range(2):
        params, examples, trees = tiny_setup(seed=3)
        cfg = TrainConfig(learning_rate=1e-2, epochs=4, batch_size=2, seed=9)
        results.append((train(params, examples, trees, cfg), params))
    (ra, pa), (rb, pb) = results
    assert ra.epoch_losses == rb.epoch_losses
    for name in pa.tensors:
        assert np.array_equal(pa.tensors[name], pb.tensors[name])


def test_different_seed_changes_trace():
    params, examples, trees = tiny_setup(seed=3)
    a = train(params, examples, trees, TrainConfig(epochs=2, seed=1)).epoch_losses
    params, examples, trees = tiny_setup(seed=3)
    b = train(params, examples, trees, TrainConfig(epochs=2, seed=2)).epoch_losses
    assert a != b


def test_worker_threads_match_single_thread():
    params_a, examples, trees = tiny_setup(seed=5)
    cfg1 = TrainConfig(epochs=3, batch_size=3, seed=4, workers=1)
    ra = train(params_a, examples, trees, cfg1)
    params_b, examples, trees = tiny_setup(seed=5)
    cfg2 = TrainConfig(epochs=3, batch_size=3, seed=4, workers=3)
    rb = train(params_b, examples, trees, cfg2)
    assert ra.epoch_losses == rb.epoch_losses
    for name in params_a.tensors:
        assert np.array_equal(params_a.tensors[name], params_b.tensors[name])


def test_full_permutation_cap_checked_before_training():
    params, examples, trees = tiny_setup()
    examples[0] = Example(["v0", "v1"], frozenset(["A", "B"]))
    cfg = TrainConfig(objective="full_permutation", full_permutation_cap=1)
    with pytest.raises(ValueError):
        train(params, examples, trees, cfg)


def test_full_permutation_objective_trains():
    params = init_model(TOKENS, VOCAB, 6, 8, 2)
    examples = [Example(["v0", "v1"], frozenset(["A"]))]
    trees = [build_balanced_tree(2)]
    cfg = TrainConfig(
        objective="full_permutation", learning_rate=0.05, epochs=60, batch_size=1
    )
    result = train(params, examples, trees, cfg)
    assert result.epoch_losses[-1] < 0.05


def test_mil_requires_single_gold_label():
    params, examples, trees = tiny_setup(kind="mil")
    with pytest.raises(ValueError):
        train(params, examples, trees, TrainConfig(epochs=1))


def test_mil_and_mimll_losses_decrease():
    for kind in ("mil", "mimll"):
        params = init_model(TOKENS, VOCAB, 6, 8, 3, kind)
        examples = [
            Example(["v0", "v1"], frozenset(["A"])),
            Example(["v2", "v3"], frozenset(["B"])),
        ]
        trees = [build_balanced_tree(2)] * 2
        cfg = TrainConfig(learning_rate=0.03, epochs=40, batch_size=2, seed=1)
        result = train(params, examples, trees, cfg)
        assert result.epoch_losses[-1] < result.epoch_losses[0]


def test_neutral_examples_rejected_for_baseline_heads():
    params = init_model(TOKENS, VOCAB, 6, 8, 3, "mimll")
    examples = [Example(["v0"], frozenset(), is_neutral=True)]
    trees = [build_balanced_tree(1)]
    with pytest.raises(ValueError):
        train(params, examples, trees, TrainConfig(epochs=1))


def test_epoch_hook_can_stop_early():
    params, examples, trees = tiny_setup()
    calls = []

    def hook(epoch, model, loss):
        calls.append(epoch)
        return epoch == 2

    result = train(params, examples, trees, TrainConfig(epochs=10), epoch_hook=hook)
    assert calls == [1, 2]
    assert len(result.epoch_losses) == 2


def test_empty_or_misaligned_inputs_rejected():
    params, examples, trees = tiny_setup()
    with pytest.raises(ValueError):
        train(params, [], [], TrainConfig(epochs=1))
    with pytest.raises(ValueError):
        train(params, examples, trees[:-1], TrainConfig(epochs=1))
