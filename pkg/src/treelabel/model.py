"""The toy differentiable backbone over parse trees.

Token embeddings feed a bottom-up composition map: leaf vectors are the
embedding rows untouched, and an internal node combines its children
through a one-hidden-layer tanh map plus the children's average. The
averaging residual keeps every node's vector carrying linear evidence of
the tokens under it, which a desk-scale tanh map alone loses with depth;
the learned part models composition effects on top.

An optional top-down pass then mixes outside context into every node: the
root's outside vector comes from a learned root-context embedding and the
root's bottom-up vector; each internal node emits both children's outside
vectors in one application from (its own outside vector, both children's
bottom-up vectors), the two output halves playing the left and right roles,
with the matching residual averages.

A label head maps a node vector (bottom-up, or top-down when enabled) to a
distribution over the label inventory. Forward passes exist twice: in plain
numpy for inference and as tape operations for training; a test pins the two
to agree.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, TapeTensor
from .dp import NodeDistributionTable
from .labels import LabelVocabulary
from .trees import ParseTree, Span

CHECKPOINT_FORMAT = "treelabel-checkpoint"
CHECKPOINT_VERSION = 1

MODEL_KINDS = ("symbolic", "mil", "mimll")


class VocabError(ValueError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass
class EncodedTree:
    bottom_up: dict[Span, np.ndarray]
    top_down: dict[Span, np.ndarray] | None = None


@dataclass
class ModelParams:
    """All learnable tensors plus the vocabularies they are sized against."""

    token_vocab: list[str]
    vocab: LabelVocabulary
    dim: int
    hidden: int
    model_kind: str
    tensors: dict[str, np.ndarray]
    use_topdown: bool = False  # how the head was trained; eval default
    token_index: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        if self.model_kind not in MODEL_KINDS:
            raise ValueError(f"unknown model kind {self.model_kind!r}")
        self.token_index = {tok: i for i, tok in enumerate(self.token_vocab)}
        if len(self.token_index) != len(self.token_vocab):
            raise ValueError("duplicate tokens in vocabulary")
        for name, arr in self.tensors.items():
            if not np.isfinite(arr).all():
                raise ValueError(f"tensor {name!r} contains non-finite values")

    def token_ids(self, tokens: Sequence[str]) -> list[int]:
        unknown = [t for t in tokens if t not in self.token_index]
        if unknown:
            raise VocabError(f"tokens not in vocabulary: {unknown}")
        return [self.token_index[t] for t in tokens]


def _mlp_shapes(dim: int, hidden: int, vocab_size: int, n_classes: int, kind: str):
    shapes = {
        "embeddings": (vocab_size, dim),
        "compose.w_in": (hidden, 2 * dim),
        "compose.b_in": (hidden,),
        "compose.w_out": (dim, hidden),
        "compose.b_out": (dim,),
        "topdown.root_embedding": (dim,),
        "topdown.root.w_in": (hidden, 2 * dim),
        "topdown.root.b_in": (hidden,),
        "topdown.root.w_out": (dim, hidden),
        "topdown.root.b_out": (dim,),
        "topdown.child.w_in": (hidden, 3 * dim),
        "topdown.child.b_in": (hidden,),
        "topdown.child.w_out": (2 * dim, hidden),
        "topdown.child.b_out": (2 * dim,),
    }
    if kind == "symbolic":
        shapes.update(
            {
                "head.w_in": (hidden, dim),
                "head.b_in": (hidden,),
                "head.w_out": (n_classes + 2, hidden),
                "head.b_out": (n_classes + 2,),
            }
        )
    elif kind == "mil":
        shapes.update(
            {"mil.query": (dim,), "mil.w": (n_classes, dim), "mil.b": (n_classes,)}
        )
    else:
        shapes.update(
            {
                "mimll.query": (n_classes, dim),
                "mimll.w": (n_classes, dim),
                "mimll.b": (n_classes,),
            }
        )
    return shapes


def init_model(
    token_vocab: Sequence[str],
    vocab: LabelVocabulary,
    dim: int,
    hidden: int,
    seed: int,
    model_kind: str = "symbolic",
) -> ModelParams:
    """Seeded uniform [-0.1, 0.1] init, with the label head biased toward
    the descend label so yield mass flows into the tree and leaves receive
    gradient from the first training step."""
    if model_kind not in MODEL_KINDS:
        raise ValueError(f"unknown model kind {model_kind!r}")
    rng = np.random.default_rng(seed)
    shapes = _mlp_shapes(dim, hidden, len(token_vocab), len(vocab.task_labels), model_kind)
    tensors = {
        name: rng.uniform(-0.1, 0.1, size=shape)
        for name, shape in sorted(shapes.items())
    }
    if model_kind == "symbolic":
        tensors["head.b_out"][len(vocab.task_labels) + 1] += 2.0
    return ModelParams(list(token_vocab), vocab, dim, hidden, model_kind, tensors)


# ---------------------------------------------------------------------------
# Plain numpy forward (inference path).
# ---------------------------------------------------------------------------


def _mlp_np(t: dict[str, np.ndarray], prefix: str, x: np.ndarray, bounded: bool) -> np.ndarray:
    h = np.tanh(t[prefix + ".w_in"] @ x + t[prefix + ".b_in"])
    out = t[prefix + ".w_out"] @ h + t[prefix + ".b_out"]
    return np.tanh(out) if bounded else out


def encode_bottom_up(
    params: ModelParams, tokens: Sequence[str], tree: ParseTree
) -> EncodedTree:
    if len(tokens) != tree.leaf_count:
        raise ValueError(
            f"{len(tokens)} tokens for a tree with {tree.leaf_count} leaves"
        )
    ids = params.token_ids(tokens)
    t = params.tensors
    emb = t["embeddings"]
    bu: dict[Span, np.ndarray] = {}
    for span in tree.post_order():
        if ParseTree.is_leaf(span):
            bu[span] = emb[ids[span[0] - 1]].copy()
        else:
            left, right = tree.children(span)
            x = np.concatenate([bu[left], bu[right]])
            bu[span] = _mlp_np(t, "compose", x, bounded=True) + 0.5 * (
                bu[left] + bu[right]
            )
    return EncodedTree(bottom_up=bu)


def encode_top_down(
    params: ModelParams, encoded: EncodedTree, tree: ParseTree
) -> EncodedTree:
    bu = encoded.bottom_up
    t = params.tensors
    td: dict[Span, np.ndarray] = {}
    root = tree.root
    root_emb = t["topdown.root_embedding"]
    x = np.concatenate([root_emb, bu[root]])
    td[root] = _mlp_np(t, "topdown.root", x, bounded=True) + 0.5 * (root_emb + bu[root])
    for span in tree.spans():
        if ParseTree.is_leaf(span):
            continue
        left, right = tree.children(span)
        x = np.concatenate([td[span], bu[left], bu[right]])
        out = _mlp_np(t, "topdown.child", x, bounded=True)
        td[left] = out[: params.dim] + 0.5 * (td[span] + bu[left])
        td[right] = out[params.dim :] + 0.5 * (td[span] + bu[right])
    return EncodedTree(bottom_up=bu, top_down=td)


def _softmax_np(logits: np.ndarray) -> np.ndarray:
    e = np.exp(logits - logits.max())
    return e / e.sum()


def node_label_distributions(
    params: ModelParams,
    encoded: EncodedTree,
    tree: ParseTree,
    use_topdown: bool = False,
) -> NodeDistributionTable:
    """Softmax of the label head at every node; rows sum to one."""
    if params.model_kind != "symbolic":
        raise ValueError("label distributions require the symbolic head")
    if use_topdown and encoded.top_down is None:
        raise ValueError("top-down encodings requested but not computed")
    reps = encoded.top_down if use_topdown else encoded.bottom_up
    t = params.tensors
    dist = {
        span: tuple(_softmax_np(_mlp_np(t, "head", reps[span], bounded=False)))
        for span in tree.spans()
    }
    return NodeDistributionTable(params.vocab, dist)


def neutral_regularizer(
    params: ModelParams, encoded: EncodedTree, tree: ParseTree
) -> float:
    """Mean over nodes of the mean squared gap to the one-hot non-terminal
    distribution; drives every node toward the descend-only label. Uses the
    top-down representations when the encoding carries them."""
    table = node_label_distributions(
        params, encoded, tree, use_topdown=encoded.top_down is not None
    )
    vocab = params.vocab
    target = np.zeros(vocab.size)
    target[vocab.index(vocab.phi_nt)] = 1.0
    total = 0.0
    for span in tree.spans():
        diff = np.asarray(table.vector(span)) - target
        total += float(diff @ diff) / vocab.size
    return total / tree.node_count


# ---------------------------------------------------------------------------
# Tape forward (training path). Mirrors the numpy math exactly; a regression
# test asserts the two paths agree.
# ---------------------------------------------------------------------------


class _LazyComponents:
    """Per-node softmax vector exposing cached scalar components, so the DP
    recursions can index it like a plain probability tuple."""

    __slots__ = ("tensor", "_cache")

    def __init__(self, tensor: TapeTensor):
        self.tensor = tensor
        self._cache: dict[int, object] = {}

    def __getitem__(self, i: int):
        got = self._cache.get(i)
        if got is None:
            got = ad.t_get(self.tensor, i)
            self._cache[i] = got
        return got


class TapeModel:
    """One example's differentiable forward state: the parameters lifted onto
    a fresh tape plus encoder helpers."""

    def __init__(self, params: ModelParams, tape: Tape | None = None):
        self.params = params
        self.tape = tape if tape is not None else Tape()
        self.tensors = {
            name: self.tape.tensor_variable(arr)
            for name, arr in sorted(params.tensors.items())
        }

    def _mlp(self, prefix: str, x: TapeTensor, bounded: bool) -> TapeTensor:
        t = self.tensors
        h = ad.t_tanh(
            ad.t_add(ad.t_matvec(t[prefix + ".w_in"], x), t[prefix + ".b_in"])
        )
        out = ad.t_add(ad.t_matvec(t[prefix + ".w_out"], h), t[prefix + ".b_out"])
        return ad.t_tanh(out) if bounded else out

    @staticmethod
    def _mean2(a: TapeTensor, b: TapeTensor) -> TapeTensor:
        return ad.t_scale_const(ad.t_add(a, b), 0.5)

    def bottom_up(self, tokens: Sequence[str], tree: ParseTree) -> dict[Span, TapeTensor]:
        if len(tokens) != tree.leaf_count:
            raise ValueError(
                f"{len(tokens)} tokens for a tree with {tree.leaf_count} leaves"
            )
        ids = self.params.token_ids(tokens)
        emb = self.tensors["embeddings"]
        bu: dict[Span, TapeTensor] = {}
        for span in tree.post_order():
            if ParseTree.is_leaf(span):
                bu[span] = ad.t_row(emb, ids[span[0] - 1])
            else:
                left, right = tree.children(span)
                x = ad.t_concat([bu[left], bu[right]])
                bu[span] = ad.t_add(
                    self._mlp("compose", x, bounded=True),
                    self._mean2(bu[left], bu[right]),
                )
        return bu

    def top_down(
        self, bu: dict[Span, TapeTensor], tree: ParseTree
    ) -> dict[Span, TapeTensor]:
        td: dict[Span, TapeTensor] = {}
        root = tree.root
        root_emb = self.tensors["topdown.root_embedding"]
        x = ad.t_concat([root_emb, bu[root]])
        td[root] = ad.t_add(
            self._mlp("topdown.root", x, bounded=True), self._mean2(root_emb, bu[root])
        )
        d = self.params.dim
        for span in tree.spans():
            if ParseTree.is_leaf(span):
                continue
            left, right = tree.children(span)
            x = ad.t_concat([td[span], bu[left], bu[right]])
            out = self._mlp("topdown.child", x, bounded=True)
            td[left] = ad.t_add(
                ad.t_slice(out, 0, d), self._mean2(td[span], bu[left])
            )
            td[right] = ad.t_add(
                ad.t_slice(out, d, 2 * d), self._mean2(td[span], bu[right])
            )
        return td

    def label_probability_tensors(
        self, reps: dict[Span, TapeTensor], tree: ParseTree
    ) -> dict[Span, TapeTensor]:
        return {
            span: ad.softmax_scalars(self._mlp("head", reps[span], bounded=False))
            for span in tree.spans()
        }

    def label_components(
        self, reps: dict[Span, TapeTensor], tree: ParseTree
    ) -> dict[Span, _LazyComponents]:
        probs = self.label_probability_tensors(reps, tree)
        return {span: _LazyComponents(p) for span, p in probs.items()}


# ---------------------------------------------------------------------------
# Checkpoints: one JSON header line, then float64 little-endian blocks in the
# order the header declares.
# ---------------------------------------------------------------------------


def save_checkpoint(params: ModelParams, path) -> None:
    names = sorted(params.tensors)
    header = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "model_kind": params.model_kind,
        "dim": params.dim,
        "hidden": params.hidden,
        "tokens": params.token_vocab,
        "task_labels": list(params.vocab.task_labels),
        "phi_t": params.vocab.phi_t,
        "phi_nt": params.vocab.phi_nt,
        "use_topdown": params.use_topdown,
        "tensors": [[name, list(params.tensors[name].shape)] for name in names],
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header).encode("utf-8"))
        fh.write(b"\n")
        for name in names:
            fh.write(np.ascontiguousarray(params.tensors[name], dtype="<f8").tobytes())


def load_checkpoint(path) -> ModelParams:
    with open(path, "rb") as fh:
        header_line = fh.readline()
        if not header_line.endswith(b"\n"):
            raise CheckpointError("truncated checkpoint: missing header line")
        try:
            header = json.loads(header_line)
        except json.JSONDecodeError as exc:
            raise CheckpointError(f"corrupt checkpoint header: {exc}") from exc
        if header.get("format") != CHECKPOINT_FORMAT:
            raise CheckpointError(f"not a checkpoint file: {header.get('format')!r}")
        if header.get("version") != CHECKPOINT_VERSION:
            raise CheckpointError(
                f"unsupported checkpoint version {header.get('version')!r}"
            )
        tensors: dict[str, np.ndarray] = {}
        for name, shape in header["tensors"]:
            count = int(np.prod(shape)) if shape else 1
            raw = fh.read(count * 8)
            if len(raw) != count * 8:
                raise CheckpointError(f"truncated checkpoint: tensor {name!r} cut short")
            tensors[name] = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
        if fh.read(1):
            raise CheckpointError("trailing bytes after declared tensors")
    vocab = LabelVocabulary(
        tuple(header["task_labels"]), header["phi_t"], header["phi_nt"]
    )
    params = ModelParams(
        token_vocab=list(header["tokens"]),
        vocab=vocab,
        dim=int(header["dim"]),
        hidden=int(header["hidden"]),
        model_kind=header["model_kind"],
        tensors=tensors,
        use_topdown=bool(header.get("use_topdown", False)),
    )
    expected = _mlp_shapes(
        params.dim,
        params.hidden,
        len(params.token_vocab),
        len(vocab.task_labels),
        params.model_kind,
    )
    for name, shape in expected.items():
        if name not in tensors or tensors[name].shape != shape:
            raise CheckpointError(
                f"tensor {name!r} has shape "
                f"{tensors.get(name).shape if name in tensors else None}, "
                f"expected {shape}"
            )
    return params


def require_compatible(
    params: ModelParams, token_vocab: Sequence[str], vocab: LabelVocabulary
) -> None:
    """Checkpoint/vocabulary agreement before evaluation or tracing."""
    if list(token_vocab) != params.token_vocab:
        raise CheckpointError("checkpoint token vocabulary differs from the dataset's")
    if vocab.all_labels != params.vocab.all_labels:
        raise CheckpointError(
            f"checkpoint labels {params.vocab.all_labels} differ from {vocab.all_labels}"
        )
