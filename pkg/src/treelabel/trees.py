"""Binary parse trees over contiguous token spans.

A tree over ``n`` tokens is identified by its split points: every internal
span ``(i, j)`` (1-based, inclusive) splits at some ``k`` with ``i <= k < j``
into children ``(i, k)`` and ``(k + 1, j)``. Leaves are the spans ``(i, i)``.
Spans double as node identifiers, so per-node tables are plain dicts keyed by
``(i, j)`` tuples.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Iterator

Span = tuple[int, int]


class TreeError(ValueError):
    pass


class SexprError(ValueError):
    """Raised on malformed s-expressions; carries the character offset."""

    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (at position {position})")
        self.position = position


@dataclass(frozen=True)
class ParseTree:
    """An immutable binary tree over leaves 1..leaf_count.

    ``splits`` maps every internal span to its split point. The structure is
    validated on construction; instances are safe to share across threads.
    """

    leaf_count: int
    splits: dict[Span, int]

    def __post_init__(self):
        if self.leaf_count < 1:
            raise TreeError("leaf_count must be >= 1")
        seen: set[Span] = set()
        stack = [self.root]
        while stack:
            span = stack.pop()
            i, j = span
            if span in seen:
                raise TreeError(f"span {span} reached twice")
            seen.add(span)
            if i == j:
                continue
            if span not in self.splits:
                raise TreeError(f"internal span {span} has no split point")
            k = self.splits[span]
            if not (i <= k < j):
                raise TreeError(f"split {k} outside span {span}")
            stack.append((i, k))
            stack.append((k + 1, j))
        if len(seen) != self.node_count or len(self.splits) != self.leaf_count - 1:
            raise TreeError("split table does not describe a single binary tree")

    @property
    def root(self) -> Span:
        return (1, self.leaf_count)

    @property
    def node_count(self) -> int:
        return 2 * self.leaf_count - 1

    @staticmethod
    def is_leaf(span: Span) -> bool:
        return span[0] == span[1]

    def children(self, span: Span) -> tuple[Span, Span]:
        k = self.splits[span]
        return (span[0], k), (k + 1, span[1])

    def spans(self) -> Iterator[Span]:
        """All spans, parents before children (pre-order)."""
        stack = [self.root]
        while stack:
            span = stack.pop()
            yield span
            if not self.is_leaf(span):
                left, right = self.children(span)
                stack.append(right)
                stack.append(left)

    def post_order(self) -> Iterator[Span]:
        """All spans, children before parents."""
        order: list[Span] = list(self.spans())
        return reversed(order)

    def leaves(self) -> Iterator[Span]:
        return ((i, i) for i in range(1, self.leaf_count + 1))


def _tree_from_rule(n: int, pick_split) -> ParseTree:
    if n < 1:
        raise TreeError("tree must have at least one leaf")
    splits: dict[Span, int] = {}
    stack: list[Span] = [(1, n)]
    while stack:
        i, j = stack.pop()
        if i == j:
            continue
        k = pick_split(i, j)
        splits[(i, j)] = k
        stack.append((k + 1, j))
        stack.append((i, k))
    return ParseTree(n, splits)


def build_balanced_tree(n: int) -> ParseTree:
    """Split every span at the midpoint floor((i + j) / 2)."""
    return _tree_from_rule(n, lambda i, j: (i + j) // 2)


def build_right_branching_tree(n: int) -> ParseTree:
    """Split every span immediately after its first token."""
    return _tree_from_rule(n, lambda i, j: i)


def build_balanced_tree_isolating(n: int, segment: Span) -> ParseTree:
    """Balanced tree in which ``segment`` is forced to be a constituent.

    Midpoint splits everywhere, except that a split falling strictly inside
    the segment snaps to the segment boundary. Stands in for a trained
    parser's habit of bracketing an inserted alien token run as one unit.
    """
    lo, hi = segment
    if not (1 <= lo <= hi <= n):
        raise TreeError(f"segment {segment} outside 1..{n}")

    def pick(i: int, j: int) -> int:
        k = (i + j) // 2
        if lo <= i and j <= hi:
            return k
        if lo <= k < hi:  # would cut the segment
            return lo - 1 if i < lo else hi
        return k

    return _tree_from_rule(n, pick)


def build_random_tree(n: int, seed: int) -> ParseTree:
    """Uniformly random split per span; identical seed gives an identical tree."""
    if n < 1:
        raise TreeError("tree must have at least one leaf")
    rng = random.Random(seed)
    splits: dict[Span, int] = {}
    # Splits drawn root-first, left before right, so the random stream is a
    # deterministic function of (n, seed).
    stack: list[Span] = [(1, n)]
    while stack:
        i, j = stack.pop()
        if i == j:
            continue
        k = rng.randint(i, j - 1)
        splits[(i, j)] = k
        stack.append((k + 1, j))
        stack.append((i, k))
    return ParseTree(n, splits)


def serialize_sexpr(tree: ParseTree) -> str:
    """Render as a balanced-parenthesis expression over 1-based leaf indices."""
    out: list[str] = []
    # (span, visited) pairs: emit "(", children, ")"
    stack: list[tuple[Span, bool]] = [(tree.root, False)]
    while stack:
        span, done = stack.pop()
        if tree.is_leaf(span):
            out.append(str(span[0]))
            continue
        if done:
            out.append(")")
            continue
        out.append("(")
        left, right = tree.children(span)
        stack.append((span, True))
        stack.append((right, False))
        stack.append((left, False))
    text: list[str] = []
    for piece in out:
        if text and piece not in ")" and text[-1] not in "(":
            text.append(" ")
        text.append(piece)
    return "".join(text)


def parse_sexpr(text: str) -> ParseTree:
    """Parse a binary tree s-expression such as "((1 2) 3)".

    Leaves must be the consecutive integers 1..n in left-to-right order and
    every parenthesized group must contain exactly two children. Violations
    raise SexprError with the character offset of the offending token.
    """
    tokens: list[tuple[str, int]] = []
    i = 0
    while i < len(text):
        c = text[i]
        if c.isspace():
            i += 1
        elif c in "()":
            tokens.append((c, i))
            i += 1
        elif c.isdigit():
            start = i
            while i < len(text) and text[i].isdigit():
                i += 1
            tokens.append((text[start:i], start))
        else:
            raise SexprError(f"unexpected character {c!r}", i)
    if not tokens:
        raise SexprError("empty input", 0)

    pos = 0

    def parse_node():
        nonlocal pos
        if pos >= len(tokens):
            raise SexprError("unexpected end of input", len(text))
        tok, at = tokens[pos]
        if tok == "(":
            pos += 1
            children = []
            while pos < len(tokens) and tokens[pos][0] != ")":
                children.append(parse_node())
            if pos >= len(tokens):
                raise SexprError("unbalanced parentheses: missing ')'", at)
            if len(children) != 2:
                raise SexprError(
                    f"node must have exactly 2 children, found {len(children)}", at
                )
            pos += 1  # consume ')'
            return children
        if tok == ")":
            raise SexprError("unbalanced parentheses: unexpected ')'", at)
        pos += 1
        return (int(tok), at)

    node = parse_node()
    if pos != len(tokens):
        raise SexprError("trailing input after tree", tokens[pos][1])

    leaves: list[tuple[int, int]] = []  # (index, text position)
    splits: dict[Span, int] = {}

    def collect(n) -> tuple[int, int]:
        """Return (min_leaf, max_leaf) of the subtree, recording splits."""
        if isinstance(n, tuple):
            leaves.append(n)
            return n[0], n[0]
        left, right = n
        li, lj = collect(left)
        ri, rj = collect(right)
        splits[(li, rj)] = lj
        return li, rj

    collect(node)
    for expected, (value, at) in enumerate(leaves, start=1):
        if value != expected:
            raise SexprError(
                f"leaf {value} out of order, expected {expected}", at
            )
    n_leaves = len(leaves)
    try:
        return ParseTree(n_leaves, splits)
    except TreeError as exc:  # overlapping spans from repeated indices
        raise SexprError(str(exc), tokens[0][1]) from exc
