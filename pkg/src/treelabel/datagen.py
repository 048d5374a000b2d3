"""Synthetic trigger-span datasets and shortcut poisoning.

Each task label owns one reserved token n-gram (its trigger). A sentence's
gold label set is exactly the set of labels whose trigger it contains;
trigger tokens never appear as filler, so rescanning the tokens reproduces
the gold labels and spans. Span positions are recorded in the files but
training never reads them; they exist for attribution scoring.

Poisoning appends synthetic examples built by sampling a clean example,
inserting a contiguous shortcut n-gram of fresh tokens at a random position,
and overwriting the gold labels with the label the shortcut prescribes.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass, field
from typing import Sequence

from .labels import LabelVocabulary


class DatasetError(ValueError):
    pass


class ConfigError(ValueError):
    pass


@dataclass
class Example:
    tokens: list[str]
    gold_labels: frozenset[str]
    gold_spans: list[tuple[int, int, str]] | None = None
    tree: str | None = None
    is_neutral: bool = False
    shortcut: tuple[int, int, str] | None = None  # (start, length, label), 1-based
    extra: dict = field(default_factory=dict)


@dataclass(frozen=True)
class SynthConfig:
    vocab_size: int = 50
    n_labels: int = 4
    trigger_length_range: tuple[int, int] = (2, 3)
    sentence_length_range: tuple[int, int] = (8, 16)
    examples: int = 1000
    multi_label_probability: float = 0.3
    seed: int = 0
    allow_duplicate_triggers: bool = False
    neutral_fraction: float = 0.0

    def __post_init__(self):
        if self.n_labels < 1:
            raise ConfigError("need at least one label")
        if self.examples < 0:
            raise ConfigError("examples must be non-negative")
        t_lo, t_hi = self.trigger_length_range
        s_lo, s_hi = self.sentence_length_range
        if not (1 <= t_lo <= t_hi):
            raise ConfigError(f"bad trigger length range {self.trigger_length_range}")
        if not (1 <= s_lo <= s_hi):
            raise ConfigError(f"bad sentence length range {self.sentence_length_range}")
        if t_hi > s_lo:
            raise ConfigError("triggers must fit in the shortest sentence")
        if not (0.0 <= self.multi_label_probability <= 1.0):
            raise ConfigError("multi_label_probability must be in [0, 1]")
        if not (0.0 <= self.neutral_fraction < 1.0):
            raise ConfigError("neutral_fraction must be in [0, 1)")


def trigger_table(config: SynthConfig) -> dict[str, tuple[str, ...]]:
    """Deterministic label -> trigger n-gram map.

    Depends only on (n_labels, trigger_length_range, vocab_size), never on
    the sampling seed, so train and test splits generated with different
    seeds share the same triggers.
    """
    t_lo, t_hi = config.trigger_length_range
    table: dict[str, tuple[str, ...]] = {}
    next_token = 0
    for i in range(config.n_labels):
        length = t_lo + i % (t_hi - t_lo + 1)
        table[f"L{i}"] = tuple(f"t{next_token + k}" for k in range(length))
        next_token += length
    if next_token >= config.vocab_size:
        raise ConfigError(
            f"vocabulary of {config.vocab_size} cannot hold {next_token} disjoint "
            "trigger tokens plus filler"
        )
    return table


def synth_vocabulary(config: SynthConfig) -> tuple[list[str], LabelVocabulary]:
    triggers = trigger_table(config)
    n_trigger_tokens = sum(len(t) for t in triggers.values())
    fillers = [f"w{i}" for i in range(config.vocab_size - n_trigger_tokens)]
    tokens = fillers + [tok for trig in triggers.values() for tok in trig]
    return tokens, LabelVocabulary(tuple(triggers))


@dataclass
class SynthData:
    examples: list[Example]
    token_vocab: list[str]
    label_vocab: LabelVocabulary
    triggers: dict[str, tuple[str, ...]]


def generate_trigger_dataset(config: SynthConfig) -> SynthData:
    triggers = trigger_table(config)
    tokens_all, label_vocab = synth_vocabulary(config)
    n_trigger_tokens = sum(len(t) for t in triggers.values())
    fillers = tokens_all[: config.vocab_size - n_trigger_tokens]
    labels = list(triggers)
    rng = random.Random(config.seed)
    s_lo, s_hi = config.sentence_length_range
    examples: list[Example] = []
    for _ in range(config.examples):
        length = rng.randint(s_lo, s_hi)
        if config.neutral_fraction > 0.0 and rng.random() < config.neutral_fraction:
            sentence = [rng.choice(fillers) for _ in range(length)]
            examples.append(
                Example(sentence, frozenset(), gold_spans=[], is_neutral=True)
            )
            continue
        chosen = [rng.choice(labels)]
        while (
            len(chosen) < len(labels)
            and rng.random() < config.multi_label_probability
        ):
            chosen.append(rng.choice([l for l in labels if l not in chosen]))
        blocks = [(label, triggers[label]) for label in chosen]
        if config.allow_duplicate_triggers:
            for label in list(chosen):
                if rng.random() < 0.5:
                    blocks.append((label, triggers[label]))
        # Trim from the back until every trigger block fits the sentence.
        while sum(len(b[1]) for b in blocks) > length:
            blocks.pop()
        chosen = sorted({label for label, _ in blocks}, key=labels.index)
        rng.shuffle(blocks)
        free = length - sum(len(b[1]) for b in blocks)
        offsets = sorted(rng.randint(0, free) for _ in blocks)
        sentence: list[str] = [""] * length
        spans: list[tuple[int, int, str]] = []
        cursor = 0
        for (label, trig), off in zip(blocks, offsets):
            start = off + cursor
            sentence[start : start + len(trig)] = trig
            spans.append((start + 1, start + len(trig), label))
            cursor += len(trig)
        for i, tok in enumerate(sentence):
            if tok == "":
                sentence[i] = rng.choice(fillers)
        spans.sort()
        examples.append(
            Example(sentence, frozenset(chosen), gold_spans=spans)
        )
    return SynthData(examples, tokens_all, label_vocab, triggers)


def default_shortcuts(label_vocab: LabelVocabulary) -> list[tuple[tuple[str, ...], str]]:
    """Two fresh 4-token n-grams prescribing the second and first task label."""
    tasks = label_vocab.task_labels
    return [
        (("#0", "#1", "#2", "#3"), tasks[1] if len(tasks) > 1 else tasks[0]),
        (("#4", "#5", "#6", "#7"), tasks[0]),
    ]


def shortcut_tokens(shortcuts: Sequence[tuple[tuple[str, ...], str]]) -> list[str]:
    out: list[str] = []
    for tokens, _ in shortcuts:
        out.extend(t for t in tokens if t not in out)
    return out


def poison_with_shortcuts(
    dataset: Sequence[Example],
    ratio: float,
    shortcuts: Sequence[tuple[tuple[str, ...], str]],
    seed: int = 0,
) -> list[Example]:
    """Return dataset plus ceil(ratio * N) appended shortcut examples.

    Each synthetic example copies a sampled clean example's tokens, inserts
    one shortcut's tokens contiguously at a random offset, takes that
    shortcut's label as its entire gold set, and records the insertion.
    """
    if not (0.0 < ratio <= 1.0):
        raise ConfigError(f"poison ratio must be in (0, 1], got {ratio}")
    if not dataset:
        raise ConfigError("cannot poison an empty dataset")
    seen = {tok for ex in dataset for tok in ex.tokens}
    clash = sorted(seen & set(shortcut_tokens(shortcuts)))
    if clash:
        raise ConfigError(f"shortcut tokens already occur in the data: {clash}")
    rng = random.Random(seed)
    count = math.ceil(ratio * len(dataset))
    poisoned: list[Example] = []
    for _ in range(count):
        src = dataset[rng.randrange(len(dataset))]
        tokens, label = shortcuts[rng.randrange(len(shortcuts))]
        at = rng.randint(0, len(src.tokens))
        merged = list(src.tokens[:at]) + list(tokens) + list(src.tokens[at:])
        poisoned.append(
            Example(
                merged,
                frozenset([label]),
                gold_spans=None,
                shortcut=(at + 1, len(tokens), label),
            )
        )
    return list(dataset) + poisoned


# ---------------------------------------------------------------------------
# Files: one JSON object per line; a vocabulary file is one token per line,
# the line number (0-based) being the token id.
# ---------------------------------------------------------------------------

_KNOWN_FIELDS = ("tokens", "labels", "spans", "tree", "neutral", "shortcut")


def example_to_json(ex: Example) -> dict:
    doc: dict = {"tokens": list(ex.tokens), "labels": sorted(ex.gold_labels)}
    if ex.gold_spans is not None:
        doc["spans"] = [[i, j, label] for i, j, label in ex.gold_spans]
    if ex.tree is not None:
        doc["tree"] = ex.tree
    if ex.is_neutral:
        doc["neutral"] = True
    if ex.shortcut is not None:
        doc["shortcut"] = list(ex.shortcut)
    doc.update(ex.extra)
    return doc


def _field_error(line_no: int, name: str, why: str) -> DatasetError:
    return DatasetError(f"line {line_no}: field {name!r} {why}")


def example_from_json(doc: dict, line_no: int = 0) -> Example:
    if "tokens" not in doc:
        raise _field_error(line_no, "tokens", "is missing")
    tokens = doc["tokens"]
    if not isinstance(tokens, list) or not all(isinstance(t, str) for t in tokens):
        raise _field_error(line_no, "tokens", "must be a list of strings")
    labels = doc.get("labels", [])
    if not isinstance(labels, list) or not all(isinstance(l, str) for l in labels):
        raise _field_error(line_no, "labels", "must be a list of strings")
    spans = None
    if "spans" in doc:
        raw = doc["spans"]
        if not isinstance(raw, list):
            raise _field_error(line_no, "spans", "must be a list of [i, j, label]")
        spans = []
        for item in raw:
            if (
                not isinstance(item, list)
                or len(item) != 3
                or not isinstance(item[0], int)
                or not isinstance(item[1], int)
                or not isinstance(item[2], str)
            ):
                raise _field_error(line_no, "spans", f"has malformed entry {item!r}")
            spans.append((item[0], item[1], item[2]))
    tree = doc.get("tree")
    if tree is not None and not isinstance(tree, str):
        raise _field_error(line_no, "tree", "must be a string")
    neutral = doc.get("neutral", False)
    if not isinstance(neutral, bool):
        raise _field_error(line_no, "neutral", "must be a boolean")
    shortcut = None
    if doc.get("shortcut") is not None:
        raw = doc["shortcut"]
        if (
            not isinstance(raw, list)
            or len(raw) != 3
            or not isinstance(raw[0], int)
            or not isinstance(raw[1], int)
            or not isinstance(raw[2], str)
        ):
            raise _field_error(line_no, "shortcut", "must be [start, length, label]")
        shortcut = (raw[0], raw[1], raw[2])
    extra = {k: v for k, v in doc.items() if k not in _KNOWN_FIELDS}
    return Example(
        tokens=list(tokens),
        gold_labels=frozenset(labels),
        gold_spans=spans,
        tree=tree,
        is_neutral=neutral,
        shortcut=shortcut,
        extra=extra,
    )


def write_jsonl(examples: Sequence[Example], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ex in examples:
            fh.write(json.dumps(example_to_json(ex)))
            fh.write("\n")


def read_jsonl(path) -> list[Example]:
    out: list[Example] = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                doc = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"line {line_no}: invalid JSON: {exc}") from exc
            if not isinstance(doc, dict):
                raise DatasetError(f"line {line_no}: expected a JSON object")
            out.append(example_from_json(doc, line_no))
    return out


def write_vocab(tokens: Sequence[str], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for tok in tokens:
            fh.write(tok)
            fh.write("\n")


def read_vocab(path) -> list[str]:
    with open(path, "r", encoding="utf-8") as fh:
        return [line.rstrip("\n") for line in fh if line.rstrip("\n")]
