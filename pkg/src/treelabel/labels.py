"""Label vocabularies, label trees, and the yield traversal.

The label inventory F is the task labels plus two reserved empty labels: a
terminal one (traversal stops, contributes nothing) and a non-terminal one
(traversal descends into children). The yield of a label tree is the set of
task labels gathered by a breadth-first walk from the root that recurses
through non-terminal nodes and stops at everything else.
"""

from __future__ import annotations

from dataclasses import dataclass

from .trees import ParseTree, Span

PHI_T = "<phi_t>"
PHI_NT = "<phi_nt>"


@dataclass(frozen=True)
class LabelVocabulary:
    """Ordered task labels plus the two reserved empty labels.

    The full inventory is ``task_labels + (phi_t, phi_nt)``; vector-valued
    per-node tables index labels in that order.
    """

    task_labels: tuple[str, ...]
    phi_t: str = PHI_T
    phi_nt: str = PHI_NT

    def __post_init__(self):
        labels = list(self.task_labels) + [self.phi_t, self.phi_nt]
        if len(set(labels)) != len(labels):
            raise ValueError(f"duplicate label identifiers in {labels}")

    @classmethod
    def make(cls, task_labels) -> "LabelVocabulary":
        return cls(tuple(task_labels))

    @property
    def all_labels(self) -> tuple[str, ...]:
        return self.task_labels + (self.phi_t, self.phi_nt)

    @property
    def size(self) -> int:
        return len(self.task_labels) + 2

    def index(self, label: str) -> int:
        try:
            return self.all_labels.index(label)
        except ValueError:
            raise KeyError(f"unknown label {label!r}") from None

    def is_task_label(self, label: str) -> bool:
        return label in self.task_labels

    def require_task_label(self, label: str) -> None:
        if not self.is_task_label(label):
            raise ValueError(f"{label!r} is not a task label")


@dataclass(frozen=True)
class LabelTree:
    """A parse tree with exactly one label from F assigned to every node."""

    tree: ParseTree
    vocab: LabelVocabulary
    assignment: dict[Span, str]

    def __post_init__(self):
        spans = set(self.tree.spans())
        if set(self.assignment) != spans:
            missing = spans - set(self.assignment)
            extra = set(self.assignment) - spans
            raise ValueError(
                f"assignment must cover every node exactly: missing={sorted(missing)}, "
                f"extra={sorted(extra)}"
            )
        known = set(self.vocab.all_labels)
        for span, label in self.assignment.items():
            if label not in known:
                raise ValueError(f"node {span} assigned unknown label {label!r}")

    def label(self, span: Span) -> str:
        return self.assignment[span]


def _walk_gathered(lt: LabelTree) -> list[tuple[Span, str]]:
    """FIFO traversal from the root: descend through non-terminal nodes,
    gather the label anywhere else. A non-terminal *leaf* gathers nothing."""
    gathered: list[tuple[Span, str]] = []
    queue: list[Span] = [lt.tree.root]
    head = 0
    while head < len(queue):
        span = queue[head]
        head += 1
        label = lt.assignment[span]
        if label == lt.vocab.phi_nt:
            if not ParseTree.is_leaf(span):
                left, right = lt.tree.children(span)
                queue.append(left)
                queue.append(right)
        else:
            gathered.append((span, label))
    return gathered


def yield_labels(lt: LabelTree) -> frozenset[str]:
    """The set of task labels the traversal gathers (empty labels dropped)."""
    return frozenset(
        label for _, label in _walk_gathered(lt) if label != lt.vocab.phi_t
    )


def yield_frontier(lt: LabelTree) -> list[tuple[int, int, str]]:
    """The gathered task-label nodes as (i, j, label), left to right.

    Frontier spans never overlap: each lies under a distinct root-to-node
    path whose interior nodes are all non-terminal.
    """
    out = [
        (span[0], span[1], label)
        for span, label in _walk_gathered(lt)
        if label != lt.vocab.phi_t
    ]
    out.sort(key=lambda item: (item[0], item[1]))
    return out
