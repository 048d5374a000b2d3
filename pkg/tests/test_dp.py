import math
import random

import pytest

from treelabel.dp import (
    CapacityError,
    GoldPartition,
    NodeDistributionTable,
    brute_force_exact,
    brute_force_naive,
    dp_contains,
    dp_contains_exclusive,
    dp_full_permutation,
    dp_other,
    exact_contains_probability,
    exact_intersects_probability,
    factorization_gap,
    loss_factorized,
    loss_full_permutation,
    naive_contains_probability,
    naive_exactly_once_probability,
)
from treelabel.labels import LabelVocabulary
from treelabel.trees import build_balanced_tree
from treelabel.verify import random_instance, random_partition

AB = LabelVocabulary(("A", "B"))


def table_ab(root, leaf1, leaf2):
    """2-leaf tree with vectors over (A, B, phi_t, phi_nt)."""
    tree = build_balanced_tree(2)
    dists = NodeDistributionTable(
        AB, {(1, 2): root, (1, 1): leaf1, (2, 2): leaf2}
    )
    return tree, dists


# The worked 2-leaf instance: P(A|root)=0.2, P(phi_nt|root)=0.3,
# P(A|leaf)=0.5 each. Expected values below were confirmed against
# brute_force_naive over all |F|^3 assignments (see the oracle tests).
WORKED = table_ab(
    (0.2, 0.1, 0.4, 0.3), (0.5, 0.2, 0.2, 0.1), (0.5, 0.1, 0.3, 0.1)
)


def test_contains_leaf_base_case():
    tree = build_balanced_tree(1)
    dists = NodeDistributionTable(AB, {(1, 1): (0.5, 0.1, 0.3, 0.1)})
    assert dp_contains(tree, dists, "A")[(1, 1)] == 0.5


def test_contains_worked_example():
    tree, dists = WORKED
    # 0.2 + 0.3 * (1 - 0.5 * 0.5)
    assert dp_contains(tree, dists, "A")[tree.root] == pytest.approx(0.425, abs=1e-12)
    naive = brute_force_naive(tree, dists)
    assert naive_contains_probability(naive, "A") == pytest.approx(0.425, abs=1e-9)


def test_contains_collapses_without_descend_mass():
    tree, dists = table_ab(
        (0.3, 0.2, 0.5, 0.0), (0.9, 0.05, 0.03, 0.02), (0.1, 0.2, 0.3, 0.4)
    )
    assert dp_contains(tree, dists, "A")[tree.root] == pytest.approx(0.3, abs=1e-12)


def test_contains_rejects_unknown_and_reserved_labels():
    tree, dists = WORKED
    with pytest.raises(ValueError):
        dp_contains(tree, dists, "Z")
    with pytest.raises(ValueError):
        dp_contains(tree, dists, AB.phi_nt)


def test_exclusive_worked_example_and_leaf_equivalence():
    tree, dists = WORKED
    # 0.2 + 0.3 * (0.5*0.5 + 0.5*0.5)
    got = dp_contains_exclusive(tree, dists, "A")[tree.root]
    assert got == pytest.approx(0.35, abs=1e-12)
    naive = brute_force_naive(tree, dists)
    assert naive_exactly_once_probability(naive, "A") == pytest.approx(got, abs=1e-9)
    assert dp_contains_exclusive(tree, dists, "A")[(1, 1)] == dp_contains(
        tree, dists, "A"
    )[(1, 1)]


def test_exclusive_collapses_without_descend_mass():
    tree, dists = table_ab(
        (0.3, 0.2, 0.5, 0.0), (0.9, 0.05, 0.03, 0.02), (0.1, 0.2, 0.3, 0.4)
    )
    assert dp_contains_exclusive(tree, dists, "A")[tree.root] == pytest.approx(0.3)


def test_other_empty_set_is_zero_everywhere():
    tree, dists = WORKED
    partition = GoldPartition.from_gold(AB, ["A", "B"])
    table = dp_other(tree, dists, partition)
    assert all(v == 0.0 for v in table.values())


def test_other_leaf_sums_unwanted_mass():
    vocab = LabelVocabulary(("A", "B", "C"))
    tree = build_balanced_tree(1)
    dists = NodeDistributionTable(vocab, {(1, 1): (0.4, 0.1, 0.2, 0.2, 0.1)})
    partition = GoldPartition.from_gold(vocab, ["A"])
    assert dp_other(tree, dists, partition)[(1, 1)] == pytest.approx(0.3, abs=1e-12)


def test_other_worked_example():
    tree, dists = table_ab(
        (0.0, 0.5, 0.0, 0.5), (0.3, 0.5, 0.1, 0.1), (0.2, 0.5, 0.2, 0.1)
    )
    partition = GoldPartition.from_gold(AB, ["A"])
    # 0.5 + 0.5 * (1 - 0.25)
    got = dp_other(tree, dists, partition)[tree.root]
    assert got == pytest.approx(0.875, abs=1e-12)
    exact = brute_force_exact(tree, dists)
    assert exact_intersects_probability(exact, ["B"]) == pytest.approx(got, abs=1e-9)


def test_partition_validation():
    with pytest.raises(ValueError):
        GoldPartition(AB, frozenset({"A"}), frozenset({"A", "B"}))
    with pytest.raises(ValueError):
        GoldPartition(AB, frozenset({"A"}), frozenset())
    with pytest.raises(ValueError):
        GoldPartition.from_gold(AB, ["missing"])


def test_loss_perfect_prediction_is_tiny():
    tree = build_balanced_tree(1)
    dists = NodeDistributionTable(AB, {(1, 1): (1.0, 0.0, 0.0, 0.0)})
    partition = GoldPartition.from_gold(AB, ["A"])
    loss = loss_factorized(tree, dists, partition)
    assert 0.0 <= loss < 1e-9


def test_loss_single_leaf_worked_example():
    tree = build_balanced_tree(1)
    dists = NodeDistributionTable(AB, {(1, 1): (0.5, 0.25, 0.15, 0.1)})
    partition = GoldPartition.from_gold(AB, ["A"])
    want = -math.log(0.5) - math.log(0.75)
    assert loss_factorized(tree, dists, partition) == pytest.approx(want, abs=1e-12)
    # cross-check both event probabilities against the exact oracle
    exact = brute_force_exact(tree, dists)
    assert exact_contains_probability(exact, "A") == pytest.approx(0.5, abs=1e-12)
    assert exact_intersects_probability(exact, ["B"]) == pytest.approx(0.25, abs=1e-12)


def test_loss_empty_other_drops_second_term():
    tree, dists = WORKED
    partition = GoldPartition.from_gold(AB, ["A", "B"])
    want = -math.log(dp_contains(tree, dists, "A")[tree.root]) - math.log(
        dp_contains(tree, dists, "B")[tree.root]
    )
    assert loss_factorized(tree, dists, partition) == pytest.approx(want, abs=1e-12)


def test_loss_empty_gold_degenerates_to_other_term():
    tree, dists = WORKED
    partition = GoldPartition.from_gold(AB, [])
    want = -math.log(1.0 - dp_other(tree, dists, partition)[tree.root])
    assert loss_factorized(tree, dists, partition) == pytest.approx(want, abs=1e-12)


def test_full_permutation_leaf_cases():
    tree = build_balanced_tree(1)
    dists = NodeDistributionTable(AB, {(1, 1): (0.4, 0.2, 0.3, 0.1)})
    table = dp_full_permutation(tree, dists, ("A", "B"))[(1, 1)]
    assert table[frozenset({"A", "B"})] == 0.0
    assert table[frozenset()] == pytest.approx(0.4, abs=1e-12)  # 0.3 + 0.1
    assert table[frozenset({"A"})] == pytest.approx(0.4, abs=1e-12)


def test_full_permutation_matches_exact_oracle_and_normalizes():
    rng = random.Random(99)
    for _ in range(40):
        tree, vocab, dists = random_instance(rng)
        exact = brute_force_exact(tree, dists)
        table = dp_full_permutation(tree, dists, vocab.task_labels)[tree.root]
        assert sum(table.values()) == pytest.approx(1.0, abs=1e-9)
        for subset, p in table.items():
            assert p == pytest.approx(exact.get(subset, 0.0), abs=1e-9)


def test_full_permutation_cap():
    vocab = LabelVocabulary(tuple(f"L{i}" for i in range(9)))
    tree = build_balanced_tree(1)
    vec = tuple([1.0 / vocab.size] * vocab.size)
    dists = NodeDistributionTable(vocab, {(1, 1): vec})
    with pytest.raises(CapacityError):
        dp_full_permutation(tree, dists, vocab.task_labels)
    # explicit higher cap lifts the guard
    table = dp_full_permutation(tree, dists, vocab.task_labels, cap=9)
    assert sum(table[(1, 1)].values()) == pytest.approx(1.0, abs=1e-9)


def test_full_permutation_loss_is_exact_negative_log():
    tree, dists = WORKED
    exact = brute_force_exact(tree, dists)
    want = -math.log(exact[frozenset({"A"})])
    assert loss_full_permutation(tree, dists, ["A"]) == pytest.approx(want, abs=1e-9)


def test_factorization_gap_finite_and_reported():
    rng = random.Random(5)
    for _ in range(20):
        tree, vocab, dists = random_instance(rng)
        partition = random_partition(rng, vocab)
        gap = factorization_gap(tree, dists, partition)
        assert math.isfinite(gap) and gap >= 0.0


def test_exact_oracle_single_leaf():
    tree = build_balanced_tree(1)
    dists = NodeDistributionTable(AB, {(1, 1): (0.6, 0.0, 0.4, 0.0)})
    exact = brute_force_exact(tree, dists)
    assert exact[frozenset({"A"})] == pytest.approx(0.6)
    assert exact[frozenset()] == pytest.approx(0.4)


def test_exact_oracle_total_mass_one():
    rng = random.Random(3)
    for _ in range(50):
        tree, _, dists = random_instance(rng)
        assert sum(brute_force_exact(tree, dists).values()) == pytest.approx(
            1.0, abs=1e-12
        )


def test_naive_oracle_trivial_and_budget():
    tree = build_balanced_tree(1)
    dists = NodeDistributionTable(AB, {(1, 1): (1.0, 0.0, 0.0, 0.0)})
    assert brute_force_naive(tree, dists) == {("A",): 1.0}
    big_vocab = LabelVocabulary(tuple(f"L{i}" for i in range(14)))
    big_tree = build_balanced_tree(4)
    vec = tuple([1.0 / big_vocab.size] * big_vocab.size)
    big = NodeDistributionTable(big_vocab, {s: vec for s in big_tree.spans()})
    with pytest.raises(CapacityError):
        brute_force_naive(big_tree, big)


def test_oracles_agree_on_contains_marginals():
    rng = random.Random(17)
    for _ in range(30):
        tree, vocab, dists = random_instance(rng, max_leaves=4, max_labels=2)
        exact = brute_force_exact(tree, dists)
        naive = brute_force_naive(tree, dists)
        for label in vocab.task_labels:
            assert naive_contains_probability(naive, label) == pytest.approx(
                exact_contains_probability(exact, label), abs=1e-9
            )


def test_dp_tables_cover_every_node_and_stay_in_range():
    rng = random.Random(7)
    for _ in range(50):
        tree, vocab, dists = random_instance(rng)
        for label in vocab.task_labels:
            for table in (
                dp_contains(tree, dists, label),
                dp_contains_exclusive(tree, dists, label),
            ):
                assert set(table) == set(tree.spans())
                assert all(0.0 <= v <= 1.0 + 1e-12 for v in table.values())
        partition = random_partition(rng, vocab)
        table = dp_other(tree, dists, partition)
        assert all(0.0 <= v <= 1.0 + 1e-12 for v in table.values())


def test_distribution_table_validation():
    with pytest.raises(ValueError):
        NodeDistributionTable(AB, {(1, 1): (0.5, 0.5, 0.0)})  # wrong width
    with pytest.raises(ValueError):
        NodeDistributionTable(AB, {(1, 1): (0.7, 0.5, -0.1, -0.1)})
    with pytest.raises(ValueError):
        NodeDistributionTable(AB, {(1, 1): (0.5, 0.5, 0.5, 0.5)})  # sums to 2
    tree = build_balanced_tree(2)
    good = NodeDistributionTable(AB, {(1, 1): (0.25, 0.25, 0.25, 0.25)})
    with pytest.raises(ValueError):
        dp_contains(tree, good, "A")  # does not cover the tree
