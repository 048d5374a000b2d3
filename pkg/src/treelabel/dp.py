"""Probability dynamic programs over (parse tree, per-node label distributions).

Every node carries a distribution over the label inventory F. A label tree is
drawn by sampling one label per node independently, and the quantities below
are probabilities of events about its yield:

- ``dp_contains``: P(a given task label appears in the yield). At a leaf this
  is the label's own probability; at an internal node the label can sit on
  the node itself, or the node is non-terminal and at least one child's
  subtree yields it.
- ``dp_contains_exclusive``: the variant forbidding the same task label on
  two non-overlapping spans, so under a non-terminal node exactly one child
  may carry it.
- ``dp_other``: P(the yield intersects a given set of unwanted labels); same
  recursion with the leaf/direct term summed over the set.
- ``dp_full_permutation``: the exact distribution over yield sets restricted
  to subsets of a target set, by convolving child subset tables under
  set-union. Exponential in the target size, hence capped.

The recursions accept any scalar type supporting +, -, * (floats here;
autodiff values during training), so the training loss reuses the exact same
code paths. Two enumeration oracles validate everything: ``brute_force_exact``
(set-union convolution over full yield-set distributions) and
``brute_force_naive`` (literal enumeration of all label assignments).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from .labels import LabelVocabulary
from .trees import ParseTree, Span

CLAMP_EPS = 1e-12

# Oracles enumerate over all 2^|labels| yield sets; the full-permutation DP
# over all subsets of its target. Explicit caps keep both bounded.
ORACLE_LABEL_CAP = 16
FULL_PERMUTATION_CAP = 8
NAIVE_ASSIGNMENT_BUDGET = 10**6


class CapacityError(ValueError):
    pass


@dataclass(frozen=True)
class NodeDistributionTable:
    """Per-node probability vectors over F, indexed in vocabulary order."""

    vocab: LabelVocabulary
    dist: dict[Span, tuple[float, ...]]

    def __post_init__(self):
        width = self.vocab.size
        for span, vec in self.dist.items():
            if len(vec) != width:
                raise ValueError(
                    f"node {span}: vector has {len(vec)} entries, expected {width}"
                )
            if any(p < 0.0 for p in vec):
                raise ValueError(f"node {span}: negative probability")
            total = sum(vec)
            if abs(total - 1.0) > 1e-9:
                raise ValueError(f"node {span}: probabilities sum to {total!r}")

    def prob(self, span: Span, label: str) -> float:
        return self.dist[span][self.vocab.index(label)]

    def vector(self, span: Span) -> tuple[float, ...]:
        return self.dist[span]

    def covers(self, tree: ParseTree) -> bool:
        return all(span in self.dist for span in tree.spans())


@dataclass(frozen=True)
class GoldPartition:
    """Task labels split into the gold set and everything else."""

    vocab: LabelVocabulary
    gold: frozenset[str]
    other: frozenset[str]

    def __post_init__(self):
        tasks = set(self.vocab.task_labels)
        if self.gold & self.other:
            raise ValueError(f"gold and other overlap: {sorted(self.gold & self.other)}")
        if self.gold | self.other != tasks:
            raise ValueError("gold and other must partition the task labels")

    @classmethod
    def from_gold(cls, vocab: LabelVocabulary, gold: Iterable[str]) -> "GoldPartition":
        gold_set = frozenset(gold)
        for label in gold_set:
            vocab.require_task_label(label)
        other = frozenset(set(vocab.task_labels) - gold_set)
        return cls(vocab, gold_set, other)


def _require_table(tree: ParseTree, dists: NodeDistributionTable) -> None:
    if not dists.covers(tree):
        raise ValueError("distribution table does not cover every node of the tree")


# ---------------------------------------------------------------------------
# Generic recursions. ``vectors`` maps each span to a sequence of scalar-like
# values (floats or tape values) in vocabulary order.
# ---------------------------------------------------------------------------


def contains_recursion(
    tree: ParseTree,
    vectors: Mapping[Span, Sequence],
    label_index: int,
    nt_index: int,
    exclusive: bool = False,
) -> dict[Span, object]:
    table: dict[Span, object] = {}
    for span in tree.post_order():
        p = vectors[span][label_index]
        if ParseTree.is_leaf(span):
            table[span] = p
            continue
        left, right = tree.children(span)
        yl, yr = table[left], table[right]
        if exclusive:
            both = yl * (1.0 - yr) + yr * (1.0 - yl)
        else:
            both = 1.0 - (1.0 - yl) * (1.0 - yr)
        table[span] = p + vectors[span][nt_index] * both
    return table


def other_recursion(
    tree: ParseTree,
    vectors: Mapping[Span, Sequence],
    other_indices: Sequence[int],
    nt_index: int,
) -> dict[Span, object]:
    table: dict[Span, object] = {}
    for span in tree.post_order():
        vec = vectors[span]
        mass = 0.0
        for idx in other_indices:
            mass = mass + vec[idx]
        if ParseTree.is_leaf(span):
            table[span] = mass
            continue
        left, right = tree.children(span)
        yl, yr = table[left], table[right]
        table[span] = mass + vec[nt_index] * (1.0 - (1.0 - yl) * (1.0 - yr))
    return table


def _is_zero(x) -> bool:
    return isinstance(x, float) and x == 0.0


def subset_recursion(
    tree: ParseTree,
    vectors: Mapping[Span, Sequence],
    target_indices: Sequence[int],
    phi_t_index: int,
    nt_index: int,
) -> dict[Span, list]:
    """Per node, a table over all subsets of the target labels (bitmask keyed):

    - empty set: the node is empty-terminal, or non-terminal with both
      children yielding nothing;
    - singleton {m}: the node carries m directly, or is non-terminal and the
      children's yields union to {m};
    - larger sets only arise from a non-terminal node whose children's
      yields union to the set.

    Leaves: the empty set takes both empty labels' mass, singletons take the
    label's own mass, larger sets are impossible.
    """
    m = len(target_indices)
    size = 1 << m
    table: dict[Span, list] = {}
    for span in tree.post_order():
        vec = vectors[span]
        row: list = [0.0] * size
        if ParseTree.is_leaf(span):
            row[0] = vec[phi_t_index] + vec[nt_index]
            for bit, idx in enumerate(target_indices):
                row[1 << bit] = vec[idx]
            table[span] = row
            continue
        left, right = tree.children(span)
        lrow, rrow = table[left], table[right]
        p_nt = vec[nt_index]
        for mask in range(size):
            acc = 0.0
            a = mask
            while True:
                xa = lrow[a]
                if not _is_zero(xa):
                    need = mask & ~a
                    c = a
                    while True:
                        xb = rrow[need | c]
                        if not _is_zero(xb):
                            acc = acc + xa * xb
                        if c == 0:
                            break
                        c = (c - 1) & a
                if a == 0:
                    break
                a = (a - 1) & mask
            value = p_nt * acc if not _is_zero(acc) else 0.0
            if mask == 0:
                value = vec[phi_t_index] + value
            elif mask & (mask - 1) == 0:
                value = vec[target_indices[mask.bit_length() - 1]] + value
            row[mask] = value
        table[span] = row
    return table


# ---------------------------------------------------------------------------
# Public float-valued operations.
# ---------------------------------------------------------------------------


def dp_contains(
    tree: ParseTree, dists: NodeDistributionTable, label: str
) -> dict[Span, float]:
    """P(label in yield) for every subtree; the root entry is the sentence
    value."""
    dists.vocab.require_task_label(label)
    _require_table(tree, dists)
    return contains_recursion(
        tree, dists.dist, dists.vocab.index(label), dists.vocab.index(dists.vocab.phi_nt)
    )


def dp_contains_exclusive(
    tree: ParseTree, dists: NodeDistributionTable, label: str
) -> dict[Span, float]:
    """Same event under the constraint that a task label may not sit on two
    non-overlapping spans, so under a non-terminal node exactly one child
    subtree may yield it."""
    dists.vocab.require_task_label(label)
    _require_table(tree, dists)
    return contains_recursion(
        tree,
        dists.dist,
        dists.vocab.index(label),
        dists.vocab.index(dists.vocab.phi_nt),
        exclusive=True,
    )


def dp_other(
    tree: ParseTree, dists: NodeDistributionTable, partition: GoldPartition
) -> dict[Span, float]:
    """P(yield intersects the non-gold task labels) per subtree."""
    _require_table(tree, dists)
    vocab = dists.vocab
    other_idx = sorted(vocab.index(l) for l in partition.other)
    return other_recursion(tree, dists.dist, other_idx, vocab.index(vocab.phi_nt))


def _clamp(p: float) -> float:
    return min(max(p, CLAMP_EPS), 1.0 - CLAMP_EPS)


def loss_factorized(
    tree: ParseTree,
    dists: NodeDistributionTable,
    partition: GoldPartition,
    exclusive: bool = False,
) -> float:
    """Negative log of (every gold label yielded, treated independently) x
    (no unwanted label yielded). Probabilities are clamped away from 0 and 1
    before the logs, so the result is finite and non-negative."""
    _require_table(tree, dists)
    vocab = dists.vocab
    contains = dp_contains_exclusive if exclusive else dp_contains
    total = 0.0
    for label in vocab.task_labels:
        if label in partition.gold:
            total -= math.log(_clamp(contains(tree, dists, label)[tree.root]))
    if partition.other:
        y_other = dp_other(tree, dists, partition)[tree.root]
        total -= math.log(_clamp(1.0 - y_other))
    return total


def dp_full_permutation(
    tree: ParseTree,
    dists: NodeDistributionTable,
    target: Iterable[str],
    cap: int = FULL_PERMUTATION_CAP,
) -> dict[Span, dict[frozenset, float]]:
    """Exact yield-set distribution restricted to subsets of ``target``.

    The root table entry for the full target set is P(yield == target).
    Work grows as 4^|target| per node, hence the cap.
    """
    _require_table(tree, dists)
    vocab = dists.vocab
    labels = sorted(set(target), key=vocab.index)
    for label in labels:
        vocab.require_task_label(label)
    if len(labels) > cap:
        raise CapacityError(
            f"{len(labels)} target labels exceed the full-permutation cap of {cap}"
        )
    idx = [vocab.index(l) for l in labels]
    raw = subset_recursion(
        tree, dists.dist, idx, vocab.index(vocab.phi_t), vocab.index(vocab.phi_nt)
    )
    masks = [
        frozenset(labels[b] for b in range(len(labels)) if mask >> b & 1)
        for mask in range(1 << len(labels))
    ]
    return {
        span: {masks[mask]: row[mask] for mask in range(len(masks))}
        for span, row in raw.items()
    }


def loss_full_permutation(
    tree: ParseTree,
    dists: NodeDistributionTable,
    gold: Iterable[str],
    cap: int = FULL_PERMUTATION_CAP,
) -> float:
    """Negative log of the exact P(yield == gold set)."""
    gold_set = frozenset(gold)
    table = dp_full_permutation(tree, dists, gold_set, cap=cap)
    return -math.log(_clamp(table[tree.root][gold_set]))


def factorization_gap(
    tree: ParseTree,
    dists: NodeDistributionTable,
    partition: GoldPartition,
    exclusive: bool = False,
    cap: int = FULL_PERMUTATION_CAP,
) -> float:
    """|factorized loss - exact loss|: the label-independence approximation
    error. Reported, never asserted zero."""
    approx = loss_factorized(tree, dists, partition, exclusive=exclusive)
    exact = loss_full_permutation(tree, dists, partition.gold, cap=cap)
    return abs(approx - exact)


# ---------------------------------------------------------------------------
# Enumeration oracles.
# ---------------------------------------------------------------------------


def brute_force_exact(
    tree: ParseTree, dists: NodeDistributionTable
) -> dict[frozenset, float]:
    """Exact distribution over yield sets, no target restriction.

    Bottom-up: a node contributes its own task label as a singleton yield,
    its empty-terminal mass to the empty yield, and (if internal) its
    non-terminal mass times the set-union convolution of the children's
    distributions. Masses sum to one by the law of total probability.
    """
    _require_table(tree, dists)
    vocab = dists.vocab
    tasks = vocab.task_labels
    if len(tasks) > ORACLE_LABEL_CAP:
        raise CapacityError(
            f"{len(tasks)} task labels exceed the oracle cap of {ORACLE_LABEL_CAP}"
        )
    t_idx = vocab.index(vocab.phi_t)
    nt_idx = vocab.index(vocab.phi_nt)
    table: dict[Span, dict[int, float]] = {}
    for span in tree.post_order():
        vec = dists.dist[span]
        out: dict[int, float] = {}
        if ParseTree.is_leaf(span):
            out[0] = vec[t_idx] + vec[nt_idx]
            for bit in range(len(tasks)):
                out[1 << bit] = out.get(1 << bit, 0.0) + vec[bit]
        else:
            left, right = tree.children(span)
            out[0] = vec[t_idx]
            for bit in range(len(tasks)):
                out[1 << bit] = out.get(1 << bit, 0.0) + vec[bit]
            p_nt = vec[nt_idx]
            for a, pa in table[left].items():
                for b, pb in table[right].items():
                    key = a | b
                    out[key] = out.get(key, 0.0) + p_nt * pa * pb
        table[span] = out
    root = table[tree.root]
    return {
        frozenset(tasks[b] for b in range(len(tasks)) if mask >> b & 1): p
        for mask, p in root.items()
    }


def exact_contains_probability(exact: Mapping[frozenset, float], label: str) -> float:
    return sum(p for s, p in exact.items() if label in s)


def exact_intersects_probability(
    exact: Mapping[frozenset, float], labels: Iterable[str]
) -> float:
    wanted = frozenset(labels)
    return sum(p for s, p in exact.items() if s & wanted)


def brute_force_naive(
    tree: ParseTree, dists: NodeDistributionTable
) -> dict[tuple, float]:
    """Enumerate every full label assignment; key the assignment probability
    by the multiset (sorted tuple) of task labels the traversal gathers.

    Keeping multiplicities (before set collapse) lets the same run answer
    both "contains the label" and "contains it exactly once" queries.
    """
    _require_table(tree, dists)
    vocab = dists.vocab
    spans = list(tree.spans())
    width = vocab.size
    count = width ** len(spans)
    if count > NAIVE_ASSIGNMENT_BUDGET:
        raise CapacityError(
            f"{width}^{len(spans)} assignments exceed the naive budget of "
            f"{NAIVE_ASSIGNMENT_BUDGET}"
        )
    span_pos = {span: i for i, span in enumerate(spans)}
    vectors = [dists.dist[span] for span in spans]
    nt_idx = vocab.index(vocab.phi_nt)
    t_idx = vocab.index(vocab.phi_t)
    tasks = vocab.task_labels
    result: dict[tuple, float] = {}
    assignment = [0] * len(spans)
    while True:
        prob = 1.0
        for i, choice in enumerate(assignment):
            prob *= vectors[i][choice]
        if prob > 0.0:
            gathered: list[str] = []
            queue: list[Span] = [tree.root]
            head = 0
            while head < len(queue):
                span = queue[head]
                head += 1
                choice = assignment[span_pos[span]]
                if choice == nt_idx:
                    if not ParseTree.is_leaf(span):
                        left, right = tree.children(span)
                        queue.append(left)
                        queue.append(right)
                elif choice != t_idx:
                    gathered.append(tasks[choice])
            key = tuple(sorted(gathered))
            result[key] = result.get(key, 0.0) + prob
        # odometer increment over assignments
        pos = 0
        while pos < len(spans):
            assignment[pos] += 1
            if assignment[pos] < width:
                break
            assignment[pos] = 0
            pos += 1
        if pos == len(spans):
            break
    return result


def naive_contains_probability(naive: Mapping[tuple, float], label: str) -> float:
    return sum(p for key, p in naive.items() if label in key)


def naive_exactly_once_probability(naive: Mapping[tuple, float], label: str) -> float:
    return sum(p for key, p in naive.items() if key.count(label) == 1)
