import random

import pytest

from treelabel.labels import LabelTree, LabelVocabulary, yield_frontier, yield_labels
from treelabel.trees import build_balanced_tree, build_random_tree


def make_label_tree(tree, vocab, labels_by_span):
    return LabelTree(tree, vocab, labels_by_span)


@pytest.fixture
def vocab():
    return LabelVocabulary(("A", "B", "C"))


def full_assignment(tree, default, overrides):
    out = {span: default for span in tree.spans()}
    out.update(overrides)
    return out


def test_vocab_rejects_duplicates():
    with pytest.raises(ValueError):
        LabelVocabulary(("A", "A"))
    with pytest.raises(ValueError):
        LabelVocabulary(("A",), phi_t="A")
    with pytest.raises(ValueError):
        LabelVocabulary(("A",), phi_t="X", phi_nt="X")


def test_assignment_must_cover_every_node(vocab):
    tree = build_balanced_tree(2)
    with pytest.raises(ValueError):
        LabelTree(tree, vocab, {(1, 2): "A"})
    with pytest.raises(ValueError):
        LabelTree(
            tree, vocab,
            {(1, 2): "A", (1, 1): "A", (2, 2): "A", (3, 3): "A"},
        )
    with pytest.raises(ValueError):
        LabelTree(
            tree, vocab, {(1, 2): "bogus", (1, 1): "A", (2, 2): "A"}
        )


def test_yield_descends_through_nonterminal(vocab):
    tree = build_balanced_tree(2)
    lt = make_label_tree(
        tree, vocab, {(1, 2): vocab.phi_nt, (1, 1): "A", (2, 2): "C"}
    )
    assert yield_labels(lt) == frozenset({"A", "C"})


def test_single_empty_terminal_yields_nothing(vocab):
    tree = build_balanced_tree(1)
    lt = make_label_tree(tree, vocab, {(1, 1): vocab.phi_t})
    assert yield_labels(lt) == frozenset()
    assert yield_frontier(lt) == []


def test_task_label_stops_traversal(vocab):
    tree = build_balanced_tree(4)
    lt = make_label_tree(tree, vocab, full_assignment(tree, "B", {(1, 4): "A"}))
    assert yield_labels(lt) == frozenset({"A"})
    assert yield_frontier(lt) == [(1, 4, "A")]


def test_duplicate_labels_collapse(vocab):
    tree = build_balanced_tree(2)
    lt = make_label_tree(
        tree, vocab, {(1, 2): vocab.phi_nt, (1, 1): "A", (2, 2): "A"}
    )
    assert yield_labels(lt) == frozenset({"A"})
    assert yield_frontier(lt) == [(1, 1, "A"), (2, 2, "A")]


def test_nonterminal_leaf_contributes_nothing(vocab):
    tree = build_balanced_tree(2)
    lt = make_label_tree(
        tree, vocab, {(1, 2): vocab.phi_nt, (1, 1): vocab.phi_nt, (2, 2): "B"}
    )
    assert yield_labels(lt) == frozenset({"B"})
    assert yield_frontier(lt) == [(2, 2, "B")]


def test_frontier_keeps_spans_and_drops_empty_terminal(vocab):
    tree = build_balanced_tree(2)
    lt = make_label_tree(
        tree, vocab, {(1, 2): vocab.phi_nt, (1, 1): "A", (2, 2): vocab.phi_t}
    )
    assert yield_frontier(lt) == [(1, 1, "A")]


def test_all_nonterminal_yields_empty(vocab):
    tree = build_balanced_tree(5)
    lt = make_label_tree(tree, vocab, full_assignment(tree, vocab.phi_nt, {}))
    assert yield_frontier(lt) == []
    assert yield_labels(lt) == frozenset()


def random_label_tree(rng, vocab, max_leaves=7):
    tree = build_random_tree(rng.randint(1, max_leaves), rng.randrange(10**6))
    labels = vocab.all_labels
    assignment = {span: labels[rng.randrange(len(labels))] for span in tree.spans()}
    return LabelTree(tree, vocab, assignment)


def test_frontier_matches_labels_and_never_overlaps(vocab):
    rng = random.Random(11)
    for _ in range(300):
        lt = random_label_tree(rng, vocab)
        frontier = yield_frontier(lt)
        assert yield_labels(lt) == frozenset(label for _, _, label in frontier)
        for (i1, j1, _), (i2, _, _) in zip(frontier, frontier[1:]):
            assert j1 < i2  # sorted output makes adjacency enough


def visited_spans(lt):
    """Independent mirror of the traversal for the insensitivity test."""
    seen = []
    queue = [lt.tree.root]
    while queue:
        span = queue.pop(0)
        seen.append(span)
        if lt.assignment[span] == lt.vocab.phi_nt and span[0] != span[1]:
            queue.extend(lt.tree.children(span))
    return seen


def test_relabeling_unvisited_nodes_never_changes_yield(vocab):
    rng = random.Random(23)
    labels = vocab.all_labels
    for _ in range(200):
        lt = random_label_tree(rng, vocab)
        visited = set(visited_spans(lt))
        baseline = (yield_labels(lt), yield_frontier(lt))
        unvisited = [s for s in lt.tree.spans() if s not in visited]
        if not unvisited:
            continue
        assignment = dict(lt.assignment)
        for span in unvisited:
            assignment[span] = labels[rng.randrange(len(labels))]
        relabeled = LabelTree(lt.tree, vocab, assignment)
        assert (yield_labels(relabeled), yield_frontier(relabeled)) == baseline
