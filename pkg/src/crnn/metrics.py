"""Edit distance, label error rate and sequence accuracy."""

from __future__ import annotations

from typing import Iterable, Sequence

from .errors import UsageError

Pair = tuple[Sequence[int], Sequence[int]]


def edit_distance(p: Sequence, q: Sequence) -> int:
    """Levenshtein distance with unit costs, two-row dynamic programme."""
    if len(p) < len(q):
        p, q = q, p
    prev = list(range(len(q) + 1))
    for i, a in enumerate(p, 1):
        cur = [i] + [0] * len(q)
        for j, b in enumerate(q, 1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a != b))
        prev = cur
    return prev[-1]


def label_error_rate(pairs: Iterable[Pair]) -> float:
    """Total edit distance over total reference length.

    ``pairs`` holds ``(hypothesis, reference)`` tuples.
    """
    pairs = list(pairs)
    if not pairs:
        raise UsageError("label_error_rate of an empty list")
    total = sum(len(ref) for _, ref in pairs)
    if total == 0:
        raise UsageError("label error rate undefined: references contain no labels")
    return sum(edit_distance(tuple(h), tuple(r)) for h, r in pairs) / total


def sequence_accuracy(pairs: Iterable[Pair]) -> float:
    pairs = list(pairs)
    if not pairs:
        raise UsageError("sequence_accuracy of an empty list")
    return sum(tuple(h) == tuple(r) for h, r in pairs) / len(pairs)


def format_report(pairs: Sequence[Pair]) -> str:
    """Evaluation report as ``key<TAB>value`` lines."""
    pairs = list(pairs)
    return (
        f"samples\t{len(pairs)}\n"
        f"seq_acc\t{sequence_accuracy(pairs):.6f}\n"
        f"label_err\t{label_error_rate(pairs):.6f}\n"
    )
