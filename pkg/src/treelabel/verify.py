"""Randomized verification sweeps: DP-vs-oracle exactness, oracle
self-consistency, exclusive-variant properties, and gradient fidelity.

Each suite runs seeded random instances and reports the worst observed
error; the CLI ``check`` subcommand prints one line per suite and the
acceptance tests assert on the same results.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import mil as milmod
from .datagen import Example
from .dp import (
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
    naive_exactly_once_probability,
)
from .labels import LabelVocabulary
from .model import (
    ModelParams,
    encode_bottom_up,
    encode_top_down,
    init_model,
    node_label_distributions,
)
from .trees import ParseTree, build_random_tree
from .training import TrainConfig, example_loss_and_gradients, tape_symbolic_loss


@dataclass
class SuiteResult:
    name: str
    cases: int
    max_error: float
    tolerance: float
    passed: bool
    detail: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        extra = f"  {self.detail}" if self.detail else ""
        return (
            f"{status}  {self.name}: {self.cases} cases, "
            f"max error {self.max_error:.3e} (tolerance {self.tolerance:.0e}){extra}"
        )


def random_instance(
    rng: random.Random, max_leaves: int = 6, max_labels: int = 3
) -> tuple[ParseTree, LabelVocabulary, NodeDistributionTable]:
    n = rng.randint(1, max_leaves)
    tree = build_random_tree(n, rng.randrange(2**31))
    k = rng.randint(1, max_labels)
    vocab = LabelVocabulary(tuple("ABC"[:k]))
    dist = {}
    for span in tree.spans():
        raw = [rng.random() + 1e-6 for _ in range(vocab.size)]
        total = sum(raw)
        dist[span] = tuple(p / total for p in raw)
    return tree, vocab, NodeDistributionTable(vocab, dist)


def random_partition(rng: random.Random, vocab: LabelVocabulary) -> GoldPartition:
    gold = [l for l in vocab.task_labels if rng.random() < 0.5]
    return GoldPartition.from_gold(vocab, gold)


def dp_oracle_suite(
    instances: int = 200, seed: int = 0, tol: float = 1e-9, inject_fault: bool = False
) -> SuiteResult:
    """dp_contains and dp_other against the exact enumeration oracle, the
    full-permutation table against the oracle on every subset, and the
    full-permutation normalization."""
    rng = random.Random(seed)
    worst = 0.0
    for case in range(instances):
        tree, vocab, dists = random_instance(rng)
        exact = brute_force_exact(tree, dists)
        for label in vocab.task_labels:
            got = dp_contains(tree, dists, label)[tree.root]
            want = exact_contains_probability(exact, label)
            if inject_fault and case == 0:
                got += 8 * tol
            worst = max(worst, abs(got - want))
        partition = random_partition(rng, vocab)
        got = dp_other(tree, dists, partition)[tree.root]
        want = exact_intersects_probability(exact, partition.other)
        worst = max(worst, abs(got - want))
        table = dp_full_permutation(tree, dists, vocab.task_labels)[tree.root]
        total = 0.0
        for subset, got in table.items():
            total += got
            worst = max(worst, abs(got - exact.get(subset, 0.0)))
        worst = max(worst, abs(total - 1.0))
    return SuiteResult("dp-vs-exact-oracle", instances, worst, tol, worst <= tol)


def cross_oracle_suite(
    instances: int = 60, seed: int = 1, tol: float = 1e-9
) -> SuiteResult:
    """Full assignment enumeration against the set-convolution oracle on
    instances small enough for both."""
    rng = random.Random(seed)
    worst = 0.0
    for _ in range(instances):
        tree, vocab, dists = random_instance(rng, max_leaves=4, max_labels=2)
        exact = brute_force_exact(tree, dists)
        naive = brute_force_naive(tree, dists)
        by_set: dict[frozenset, float] = {}
        for multiset, p in naive.items():
            key = frozenset(multiset)
            by_set[key] = by_set.get(key, 0.0) + p
        keys = set(exact) | set(by_set)
        for key in keys:
            worst = max(worst, abs(exact.get(key, 0.0) - by_set.get(key, 0.0)))
        worst = max(worst, abs(sum(naive.values()) - 1.0))
    return SuiteResult("oracle-self-consistency", instances, worst, tol, worst <= tol)


def exclusive_suite(
    instances: int = 200, seed: int = 2, tol: float = 1e-9
) -> SuiteResult:
    """Exclusive values never exceed inclusive ones at any node; on 2-leaf
    trees the exclusive value equals the enumerated exactly-once
    probability."""
    rng = random.Random(seed)
    worst = 0.0
    for case in range(instances):
        tree, vocab, dists = random_instance(rng)
        for label in vocab.task_labels:
            incl = dp_contains(tree, dists, label)
            excl = dp_contains_exclusive(tree, dists, label)
            for span in tree.spans():
                worst = max(worst, excl[span] - incl[span])
        if case % 2 == 0:
            tree2, vocab2, dists2 = random_instance(rng, max_leaves=2)
            if tree2.leaf_count == 2:
                naive = brute_force_naive(tree2, dists2)
                for label in vocab2.task_labels:
                    got = dp_contains_exclusive(tree2, dists2, label)[tree2.root]
                    want = naive_exactly_once_probability(naive, label)
                    worst = max(worst, abs(got - want))
    return SuiteResult("exclusive-variant", instances, worst, tol, worst <= tol)


def _scalar_softmax(logits):
    shift = max(x.value for x in logits)
    exps = [ad.exp(x - shift) for x in logits]
    total = exps[0]
    for e in exps[1:]:
        total = total + e
    return [e / total for e in exps]


def dp_loss_gradient_suite(
    cases: int = 50, seed: int = 3, tol: float = 1e-4
) -> SuiteResult:
    """Backward gradients of the factorized (both variants) and
    full-permutation losses against central finite differences, with
    per-node distributions parameterized by raw logits."""
    rng = random.Random(seed)
    worst = 0.0
    for case in range(cases):
        tree, vocab, dists = random_instance(rng, max_leaves=4)
        partition = random_partition(rng, vocab)
        spans = list(tree.spans())
        width = vocab.size
        params = [rng.uniform(-1.5, 1.5) for _ in range(len(spans) * width)]
        exclusive = case % 3 == 1
        objective = "full_permutation" if case % 3 == 2 else "factorized"

        def loss_fn(xs):
            vectors = {}
            for s_idx, span in enumerate(spans):
                logits = xs[s_idx * width : (s_idx + 1) * width]
                vectors[span] = _scalar_softmax(logits)
            return tape_symbolic_loss(
                xs[0].tape, vectors, tree, vocab, partition.gold,
                exclusive, objective, 8,
            )

        worst = max(worst, ad.finite_difference_check(loss_fn, params))
    return SuiteResult("dp-loss-gradients", cases, worst, tol, worst <= tol)


def _float_example_loss(params: ModelParams, ex, tree, config: TrainConfig) -> float:
    """Loss via the numpy forward path; the finite-difference reference."""
    encoded = encode_bottom_up(params, ex.tokens, tree)
    needs_td = config.use_topdown or params.model_kind in ("mil", "mimll")
    if needs_td:
        encoded = encode_top_down(params, encoded, tree)
    if params.model_kind == "mil":
        loss, _, _ = milmod.mil_forward(params, encoded, tree, sorted(ex.gold_labels)[0])
        return loss
    if params.model_kind == "mimll":
        loss, _, _ = milmod.mimll_forward(params, encoded, tree, ex.gold_labels)
        return loss
    dists = node_label_distributions(params, encoded, tree, use_topdown=config.use_topdown)
    if config.objective == "full_permutation":
        return loss_full_permutation(tree, dists, ex.gold_labels)
    partition = GoldPartition.from_gold(params.vocab, ex.gold_labels)
    return loss_factorized(tree, dists, partition, exclusive=config.exclusive)


def model_gradient_suite(
    cases: int = 50, seed: int = 4, tol: float = 1e-4, h: float = 1e-5
) -> SuiteResult:
    """End-to-end gradients of the full model against central finite
    differences of the numpy forward path, cycling through objectives,
    encoder flags, and the attention baselines."""
    rng = random.Random(seed)
    worst = 0.0
    variants = [
        ("symbolic", "factorized", False, False),
        ("symbolic", "factorized", True, False),
        ("symbolic", "factorized", False, True),
        ("symbolic", "factorized", True, True),
        ("symbolic", "full_permutation", False, False),
        ("symbolic", "full_permutation", True, False),
        ("mil", "factorized", True, False),
        ("mimll", "factorized", True, False),
    ]
    for case in range(cases):
        kind, objective, topdown, exclusive = variants[case % len(variants)]
        n_tokens = rng.randint(1, 4)
        n_labels = rng.randint(1, 3) if kind != "mil" else rng.randint(2, 3)
        token_vocab = [f"v{i}" for i in range(5)]
        vocab = LabelVocabulary(tuple(f"L{i}" for i in range(n_labels)))
        dim = rng.choice([2, 3, 4])
        hidden = rng.choice([2, 3])
        params = init_model(token_vocab, vocab, dim, hidden, rng.randrange(2**31), kind)
        tree = build_random_tree(n_tokens, rng.randrange(2**31))
        tokens = [token_vocab[rng.randrange(len(token_vocab))] for _ in range(n_tokens)]
        if kind == "mil":
            gold = frozenset([vocab.task_labels[rng.randrange(n_labels)]])
        else:
            gold = frozenset(l for l in vocab.task_labels if rng.random() < 0.5)
        ex = Example(tokens, gold)
        config = TrainConfig(
            use_topdown=topdown, exclusive=exclusive, objective=objective,
            embedding_dim=dim, hidden_dim=hidden,
        )
        _, grads = example_loss_and_gradients(params, ex, tree, config)
        for name in sorted(params.tensors):
            arr = params.tensors[name]
            grad = grads[name]
            flat = arr.reshape(-1)
            gflat = np.asarray(grad).reshape(-1)
            for idx in range(flat.size):
                keep = flat[idx]
                flat[idx] = keep + h
                up = _float_example_loss(params, ex, tree, config)
                flat[idx] = keep - h
                down = _float_example_loss(params, ex, tree, config)
                flat[idx] = keep
                fd = (up - down) / (2.0 * h)
                err = abs(gflat[idx] - fd) / max(1.0, abs(fd))
                worst = max(worst, err)
    return SuiteResult("model-gradients", cases, worst, tol, worst <= tol)


def factorization_gap_report(instances: int = 50, seed: int = 5) -> SuiteResult:
    """The label-independence approximation gap: reported, asserted finite
    only."""
    rng = random.Random(seed)
    worst = 0.0
    for _ in range(instances):
        tree, vocab, dists = random_instance(rng)
        partition = random_partition(rng, vocab)
        gap = factorization_gap(tree, dists, partition)
        if not math.isfinite(gap):
            return SuiteResult(
                "factorization-gap", instances, math.inf, math.inf, False,
                "non-finite gap",
            )
        worst = max(worst, gap)
    return SuiteResult(
        "factorization-gap", instances, worst, math.inf, True,
        "approximation gap, reported only",
    )


def run_all(
    dp_instances: int = 200,
    gradient_cases: int = 50,
    model_cases: int = 12,
    seed: int = 0,
    inject_fault: bool = False,
) -> list[SuiteResult]:
    return [
        dp_oracle_suite(dp_instances, seed=seed, inject_fault=inject_fault),
        cross_oracle_suite(max(10, dp_instances // 3), seed=seed + 1),
        exclusive_suite(dp_instances, seed=seed + 2),
        dp_loss_gradient_suite(gradient_cases, seed=seed + 3),
        model_gradient_suite(model_cases, seed=seed + 4),
        factorization_gap_report(max(10, dp_instances // 4), seed=seed + 5),
    ]
