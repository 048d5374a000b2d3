"""Inference and metrics: label trees, sentence-level scores, span
attribution, token ranking, and shortcut faithfulness.

Span attribution follows the token-length-weighted convention: the overlap
set pairs predicted and gold spans with the same label and a non-empty
intersection, precision divides total overlap length by total predicted
length, recall by total gold length.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from . import mil as milmod
from .dp import NodeDistributionTable
from .labels import LabelTree, yield_frontier, yield_labels
from .model import (
    ModelParams,
    encode_bottom_up,
    encode_top_down,
    node_label_distributions,
)
from .trees import ParseTree, Span


class SpanLabel(NamedTuple):
    i: int
    j: int
    label: str


@dataclass(frozen=True)
class SentenceMetrics:
    exact_match: float
    precision: float
    recall: float
    f1: float


@dataclass(frozen=True)
class AttributionReport:
    precision: float
    recall: float
    f1: float


@dataclass(frozen=True)
class ShortcutReport:
    top_k_precision: float
    span_label_precision: float
    k: int
    examples: int


def predict_label_tree(
    params: ModelParams,
    tokens: Sequence[str],
    tree: ParseTree,
    use_topdown: bool = False,
) -> tuple[LabelTree, NodeDistributionTable]:
    """Argmax label per node; the distributions are kept for ranking."""
    encoded = encode_bottom_up(params, tokens, tree)
    if use_topdown:
        encoded = encode_top_down(params, encoded, tree)
    dists = node_label_distributions(params, encoded, tree, use_topdown=use_topdown)
    vocab = params.vocab
    assignment = {
        span: vocab.all_labels[int(np.argmax(dists.vector(span)))]
        for span in tree.spans()
    }
    return LabelTree(tree, vocab, assignment), dists


def sentence_metrics(
    predictions: Sequence[frozenset], golds: Sequence[frozenset]
) -> SentenceMetrics:
    """Exact-match rate plus micro precision/recall/F1 over pooled label
    instances."""
    if len(predictions) != len(golds):
        raise ValueError(
            f"{len(predictions)} predictions vs {len(golds)} gold sets"
        )
    if not predictions:
        return SentenceMetrics(0.0, 0.0, 0.0, 0.0)
    exact = sum(1 for p, g in zip(predictions, golds) if p == g) / len(predictions)
    tp = sum(len(p & g) for p, g in zip(predictions, golds))
    fp = sum(len(p - g) for p, g in zip(predictions, golds))
    fn = sum(len(g - p) for p, g in zip(predictions, golds))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return SentenceMetrics(exact, precision, recall, f1)


def _check_disjoint(spans: Sequence, name: str) -> None:
    """Spans carrying the same label must not overlap. Different labels may
    share tokens: the per-label span selections of the attention baselines
    are independent, and two labels on one span is legitimate."""
    by_label: dict[str, list] = {}
    for s in spans:
        if not (1 <= s[0] <= s[1]):
            raise ValueError(f"{name} span ({s[0]},{s[1]}) is malformed")
        by_label.setdefault(s[2], []).append((s[0], s[1]))
    for label, group in by_label.items():
        group.sort()
        for (a, b), (c, _) in zip(group, group[1:]):
            if c <= b:
                raise ValueError(
                    f"{name} spans for {label!r} overlap around ({a},{b}) and ({c},...)"
                )


def _pooled_attribution(
    pred_total: int, gold_total: int, overlap_total: int
) -> AttributionReport:
    precision = overlap_total / pred_total if pred_total else 0.0
    recall = overlap_total / gold_total if gold_total else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return AttributionReport(precision, recall, f1)


def _overlap_length(pred: Sequence, gold: Sequence) -> int:
    total = 0
    for p in pred:
        for g in gold:
            if p[2] == g[2]:
                lo = max(p[0], g[0])
                hi = min(p[1], g[1])
                if lo <= hi:
                    total += hi - lo + 1
    return total


def span_attribution(pred: Sequence, gold: Sequence) -> AttributionReport:
    """Token-length-weighted precision/recall/F1 between two labeled span
    sets, each internally non-overlapping."""
    _check_disjoint(pred, "predicted")
    _check_disjoint(gold, "gold")
    return _pooled_attribution(
        sum(p[1] - p[0] + 1 for p in pred),
        sum(g[1] - g[0] + 1 for g in gold),
        _overlap_length(pred, gold),
    )


def span_attribution_corpus(
    pred_lists: Sequence[Sequence], gold_lists: Sequence[Sequence]
) -> AttributionReport:
    """Pool overlap/predicted/gold lengths over a whole corpus."""
    if len(pred_lists) != len(gold_lists):
        raise ValueError("prediction and gold lists must align")
    pred_total = gold_total = overlap_total = 0
    for pred, gold in zip(pred_lists, gold_lists):
        _check_disjoint(pred, "predicted")
        _check_disjoint(gold, "gold")
        pred_total += sum(p[1] - p[0] + 1 for p in pred)
        gold_total += sum(g[1] - g[0] + 1 for g in gold)
        overlap_total += _overlap_length(pred, gold)
    return _pooled_attribution(pred_total, gold_total, overlap_total)


def bucket_by_span_length(
    items: Sequence[tuple[Sequence, Sequence]], boundaries: Sequence[float]
) -> dict[str, AttributionReport | None]:
    """Assign examples by mean gold-span length into half-open buckets
    [0, b0), [b0, b1), ..., [b_last, inf); a mean exactly on a boundary goes
    to the higher bucket. Examples without gold spans join no bucket; empty
    buckets report None rather than zeros."""
    bounds = list(boundaries)
    if bounds != sorted(bounds) or len(set(bounds)) != len(bounds):
        raise ValueError("boundaries must be strictly ascending")
    edges = [0.0] + [float(b) for b in bounds] + [math.inf]
    names = []
    for lo, hi in zip(edges, edges[1:]):
        names.append(f"[{lo:g},{hi:g})" if hi != math.inf else f"[{lo:g},inf)")
    grouped: list[list[tuple[Sequence, Sequence]]] = [[] for _ in names]
    for pred, gold in items:
        if not gold:
            continue
        mean_len = sum(g[1] - g[0] + 1 for g in gold) / len(gold)
        idx = 0
        while idx < len(bounds) and mean_len >= bounds[idx]:
            idx += 1
        grouped[idx].append((pred, gold))
    out: dict[str, AttributionReport | None] = {}
    for name, bucket in zip(names, grouped):
        if not bucket:
            out[name] = None
        else:
            out[name] = span_attribution_corpus(
                [p for p, _ in bucket], [g for _, g in bucket]
            )
    return out


def rank_tokens(
    tree: ParseTree, dists: NodeDistributionTable, label: str
) -> list[int]:
    """Order token positions by recursive child comparison: from each node,
    the child with the higher probability of the label contributes all of
    its tokens first; ties go left."""
    dists.vocab.require_task_label(label)
    order: list[int] = []
    stack: list[Span] = [tree.root]
    while stack:
        span = stack.pop()
        if ParseTree.is_leaf(span):
            order.append(span[0])
            continue
        left, right = tree.children(span)
        if dists.prob(left, label) >= dists.prob(right, label):
            stack.append(right)
            stack.append(left)
        else:
            stack.append(left)
            stack.append(right)
    return order


def shortcut_metrics(
    ranked: Sequence[Sequence[int]],
    label_trees: Sequence[LabelTree],
    shortcuts: Sequence[tuple[int, int, str]],
    k: int = 4,
) -> ShortcutReport:
    """Faithfulness of shortcut localization.

    ``ranked[i]`` must be the token ranking for example i under its
    shortcut's label. Top-k precision counts ranked tokens that are shortcut
    tokens; span-label precision counts examples whose yield frontier has a
    single span covering all shortcut tokens with the shortcut's label.
    """
    if not (len(ranked) == len(label_trees) == len(shortcuts)):
        raise ValueError("ranked lists, label trees and shortcuts must align")
    if not shortcuts:
        return ShortcutReport(0.0, 0.0, k, 0)
    top_total = 0.0
    span_hits = 0
    for order, lt, (start, length, label) in zip(ranked, label_trees, shortcuts):
        if k > len(order):
            raise ValueError(f"k={k} exceeds sentence length {len(order)}")
        positions = set(range(start, start + length))
        top_total += len(set(order[:k]) & positions) / k
        end = start + length - 1
        if any(
            i <= start and j >= end and lab == label
            for i, j, lab in yield_frontier(lt)
        ):
            span_hits += 1
    n = len(shortcuts)
    return ShortcutReport(top_total / n, span_hits / n, k, n)


def predicted_spans(params: ModelParams, lt: LabelTree) -> list[SpanLabel]:
    return [SpanLabel(i, j, label) for i, j, label in yield_frontier(lt)]


def format_label_tree(
    lt: LabelTree, dists: NodeDistributionTable, tokens: Sequence[str]
) -> list[str]:
    """Indented per-node lines: span, top-1 label, its probability, and the
    covered text."""
    lines: list[str] = []
    stack: list[tuple[Span, int]] = [(lt.tree.root, 0)]
    while stack:
        span, depth = stack.pop()
        label = lt.label(span)
        p = dists.prob(span, label)
        text = " ".join(tokens[span[0] - 1 : span[1]])
        lines.append(f"{'  ' * depth}({span[0]},{span[1]}) {label} p={p:.3f} | {text}")
        if not ParseTree.is_leaf(span):
            left, right = lt.tree.children(span)
            stack.append((right, depth + 1))
            stack.append((left, depth + 1))
    return lines


# ---------------------------------------------------------------------------
# Whole-dataset evaluation shared by the CLI and the acceptance suite.
# ---------------------------------------------------------------------------


def _predict_example(params: ModelParams, ex, tree: ParseTree, use_topdown: bool):
    """Per-kind prediction: (label set, predicted spans, extras)."""
    if params.model_kind == "symbolic":
        lt, dists = predict_label_tree(params, ex.tokens, tree, use_topdown)
        return yield_labels(lt), predicted_spans(params, lt), (lt, dists)
    encoded = encode_top_down(
        params, encode_bottom_up(params, ex.tokens, tree), tree
    )
    if params.model_kind == "mil":
        _, attn, doc = milmod.mil_forward(
            params, encoded, tree, params.vocab.task_labels[0]
        )
        label = params.vocab.task_labels[int(np.argmax(doc))]
        best = min(attn.items(), key=lambda kv: (-kv[1], kv[0][0], kv[0][1] - kv[0][0]))[0]
        return frozenset([label]), [SpanLabel(best[0], best[1], label)], None
    _, attention, scores = milmod.mimll_forward(params, encoded, tree, frozenset())
    labels = frozenset(l for l, s in scores.items() if s > 0.5)
    spans = [
        SpanLabel(i, j, l)
        for i, j, l in milmod.mimll_select_spans(attention, scores, threshold=0.5)
    ]
    return labels, spans, None


def evaluate(
    params: ModelParams,
    examples: Sequence,
    trees: Sequence[ParseTree],
    use_topdown: bool = False,
    bucket_boundaries: Sequence[float] | None = None,
    top_k: int = 4,
) -> dict:
    """Sentence metrics over all examples; span attribution (with optional
    length buckets) over examples carrying gold spans; shortcut metrics over
    examples carrying shortcut annotations. Returns a JSON-ready dict."""
    if len(examples) != len(trees):
        raise ValueError("examples and trees must align")
    predictions: list[frozenset] = []
    golds: list[frozenset] = []
    attribution_items: list[tuple[list, list]] = []
    shortcut_ranked: list[list[int]] = []
    shortcut_trees: list[LabelTree] = []
    shortcut_specs: list[tuple[int, int, str]] = []
    for ex, tree in zip(examples, trees):
        labels, spans, extras = _predict_example(params, ex, tree, use_topdown)
        predictions.append(labels)
        golds.append(ex.gold_labels)
        if ex.gold_spans:
            gold_spans = [SpanLabel(i, j, l) for i, j, l in ex.gold_spans]
            attribution_items.append((spans, gold_spans))
        if ex.shortcut is not None and params.model_kind == "symbolic":
            lt, dists = extras
            shortcut_ranked.append(rank_tokens(tree, dists, ex.shortcut[2]))
            shortcut_trees.append(lt)
            shortcut_specs.append(ex.shortcut)
    report: dict = {
        "examples": len(examples),
        "sentence": sentence_metrics(predictions, golds).__dict__,
    }
    if attribution_items:
        pooled = span_attribution_corpus(
            [p for p, _ in attribution_items], [g for _, g in attribution_items]
        )
        report["span_attribution"] = pooled.__dict__
        if bucket_boundaries:
            buckets = bucket_by_span_length(attribution_items, bucket_boundaries)
            report["span_attribution"]["buckets"] = {
                name: (rep.__dict__ if rep is not None else None)
                for name, rep in buckets.items()
            }
    if shortcut_specs:
        sc = shortcut_metrics(shortcut_ranked, shortcut_trees, shortcut_specs, k=top_k)
        report["shortcut"] = sc.__dict__
    return report
