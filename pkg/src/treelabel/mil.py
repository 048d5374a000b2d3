"""Attention-based multi-instance baselines over tree spans.

Every node of the parse tree is an instance. Attention scores are dot
products of the node's top-down (outside-context) vector with a learned
query; instance predictions come from a linear classifier on the bottom-up
vector. The single-label variant aggregates instance softmax distributions
into one document distribution; the multi-label variant keeps a separate
query and a sigmoid scorer per class and aggregates per class.

Numpy forwards here serve inference and tests; the tape twins used in
training live alongside so the two stay in one file.
"""

from __future__ import annotations

import math
from typing import Mapping, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import TapeTensor, TapeValue
from .dp import CLAMP_EPS
from .model import EncodedTree, ModelParams, TapeModel
from .trees import ParseTree, Span


def _spans(tree: ParseTree) -> list[Span]:
    return list(tree.spans())


def _softmax(scores: np.ndarray) -> np.ndarray:
    e = np.exp(scores - scores.max())
    return e / e.sum()


def _sigmoid(x: float) -> float:
    return 0.5 * (math.tanh(0.5 * x) + 1.0)


def mil_forward(
    params: ModelParams,
    encoded: EncodedTree,
    tree: ParseTree,
    gold_label: str,
) -> tuple[float, dict[Span, float], np.ndarray]:
    """Single-label attention aggregation.

    Returns (negative log-likelihood of the gold class, attention weight per
    span, document distribution over task labels).
    """
    if params.model_kind != "mil":
        raise ValueError(f"model kind {params.model_kind!r} is not 'mil'")
    if encoded.top_down is None:
        raise ValueError("attention requires top-down encodings")
    params.vocab.require_task_label(gold_label)
    spans = _spans(tree)
    t = params.tensors
    scores = np.array([encoded.top_down[s] @ t["mil.query"] for s in spans])
    attn = _softmax(scores)
    doc = np.zeros(len(params.vocab.task_labels))
    for a, s in zip(attn, spans):
        doc += a * _softmax(t["mil.w"] @ encoded.bottom_up[s] + t["mil.b"])
    gold_idx = params.vocab.task_labels.index(gold_label)
    loss = -math.log(min(max(doc[gold_idx], CLAMP_EPS), 1.0 - CLAMP_EPS))
    return loss, dict(zip(spans, attn)), doc


def mimll_forward(
    params: ModelParams,
    encoded: EncodedTree,
    tree: ParseTree,
    gold: frozenset,
) -> tuple[float, dict[str, dict[Span, float]], dict[str, float]]:
    """Per-label attention aggregation of sigmoid span scores.

    Returns (loss, per-label attention maps, per-label document scores).
    The loss rewards gold-label scores near one and all other task-label
    scores near zero, with clamping before the logs.
    """
    if params.model_kind != "mimll":
        raise ValueError(f"model kind {params.model_kind!r} is not 'mimll'")
    if encoded.top_down is None:
        raise ValueError("attention requires top-down encodings")
    for label in gold:
        params.vocab.require_task_label(label)
    spans = _spans(tree)
    t = params.tensors
    attention: dict[str, dict[Span, float]] = {}
    scores: dict[str, float] = {}
    loss = 0.0
    for c, label in enumerate(params.vocab.task_labels):
        raw = np.array([encoded.top_down[s] @ t["mimll.query"][c] for s in spans])
        attn = _softmax(raw)
        p = 0.0
        for a, s in zip(attn, spans):
            p += a * _sigmoid(float(t["mimll.w"][c] @ encoded.bottom_up[s] + t["mimll.b"][c]))
        p = min(max(p, CLAMP_EPS), 1.0 - CLAMP_EPS)
        attention[label] = dict(zip(spans, attn))
        scores[label] = p
        loss -= math.log(p) if label in gold else math.log(1.0 - p)
    return loss, attention, scores


def mimll_select_spans(
    attention: Mapping[str, Mapping[Span, float]],
    scores: Mapping[str, float],
    threshold: float = 0.5,
) -> list[tuple[int, int, str]]:
    """For each label scoring above the threshold, the span with maximal
    attention; ties break leftmost start, then shortest."""
    out: list[tuple[int, int, str]] = []
    for label in attention:
        if scores[label] <= threshold:
            continue
        best = min(
            attention[label].items(),
            key=lambda item: (-item[1], item[0][0], item[0][1] - item[0][0]),
        )[0]
        out.append((best[0], best[1], label))
    out.sort(key=lambda item: (item[0], item[1], item[2]))
    return out


# ---------------------------------------------------------------------------
# Tape twins for training.
# ---------------------------------------------------------------------------


def _tape_attention(
    tm: TapeModel, td: dict[Span, TapeTensor], spans: Sequence[Span], query: TapeTensor
) -> list[TapeValue]:
    raw = [ad.t_dot(td[s], query) for s in spans]
    weights = ad.softmax_scalars(ad.t_from_scalars(raw))
    return [ad.t_get(weights, i) for i in range(len(spans))]


def tape_mil_loss(
    tm: TapeModel,
    bu: dict[Span, TapeTensor],
    td: dict[Span, TapeTensor],
    tree: ParseTree,
    gold_label: str,
) -> TapeValue:
    params = tm.params
    params.vocab.require_task_label(gold_label)
    spans = _spans(tree)
    attn = _tape_attention(tm, td, spans, tm.tensors["mil.query"])
    gold_idx = params.vocab.task_labels.index(gold_label)
    p_gold = 0.0
    for a, s in zip(attn, spans):
        logits = ad.t_add(ad.t_matvec(tm.tensors["mil.w"], bu[s]), tm.tensors["mil.b"])
        probs = ad.softmax_scalars(logits)
        p_gold = p_gold + a * ad.t_get(probs, gold_idx)
    return 0.0 - ad.log(ad.clamp(p_gold, CLAMP_EPS, 1.0 - CLAMP_EPS))


def tape_mimll_loss(
    tm: TapeModel,
    bu: dict[Span, TapeTensor],
    td: dict[Span, TapeTensor],
    tree: ParseTree,
    gold: frozenset,
) -> TapeValue:
    params = tm.params
    spans = _spans(tree)
    loss = 0.0
    for c, label in enumerate(params.vocab.task_labels):
        query = ad.t_row(tm.tensors["mimll.query"], c)
        attn = _tape_attention(tm, td, spans, query)
        w_c = ad.t_row(tm.tensors["mimll.w"], c)
        b_c = ad.t_get(tm.tensors["mimll.b"], c)
        p = 0.0
        for a, s in zip(attn, spans):
            score = ad.sigmoid(ad.t_dot(w_c, bu[s]) + b_c)
            p = p + a * score
        p = ad.clamp(p, CLAMP_EPS, 1.0 - CLAMP_EPS)
        if label in gold:
            loss = loss - ad.log(p)
        else:
            loss = loss - ad.log(1.0 - p)
    return loss
