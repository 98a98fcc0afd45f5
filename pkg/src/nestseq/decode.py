"""Best and second-best path search, and outside-to-inside nested decoding."""

from __future__ import annotations

import heapq
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Dict, Hashable, List, Optional, Sequence, Set, Tuple

import numpy as np

from .lattice import LatticeScores, ShapeError, path_score
from .tagging import NUM_TAGS, Mention, TagSeq, mentions_from_tags


class ExhaustedError(RuntimeError):
    """No path other than the excluded one exists in the span."""


@dataclass(frozen=True)
class DecodedPath:
    tags: TagSeq
    score: float


@dataclass
class DecodeStats:
    """Instrumentation of nested decoding per entity type.

    ``span_work`` totals the widths of the spans whose dynamic-programming
    table was computed; ``query_work`` totals the widths of every best or
    second-best query, including the ones answered from a cached table.
    """

    span_work: Dict[Hashable, int] = field(default_factory=lambda: defaultdict(int))
    spans: Dict[Hashable, List[Tuple[int, int]]] = field(default_factory=lambda: defaultdict(list))
    query_work: Dict[Hashable, int] = field(default_factory=lambda: defaultdict(int))

    def record(self, entity_type: Hashable, span: Tuple[int, int]) -> None:
        self.span_work[entity_type] += span[1] - span[0]
        self.spans[entity_type].append(span)

    def record_query(self, entity_type: Hashable, span: Tuple[int, int]) -> None:
        self.query_work[entity_type] += span[1] - span[0]

    @property
    def total_work(self) -> int:
        return sum(self.span_work.values())


def _completions(scores: LatticeScores, span: Tuple[int, int]) -> np.ndarray:
    """Best completion score from each (position, tag) to the END boundary.

    Row ``j`` covers span position ``s + j``; the emission at that position
    itself is excluded.
    """
    s, e = span
    p = scores.emissions
    trans = scores.transitions
    h = np.empty((e - s, NUM_TAGS))
    h[-1] = scores.end_transitions
    for j in range(e - s - 2, -1, -1):
        h[j] = np.max(trans + (p[:, s + j + 1] + h[j + 1])[None, :], axis=1)
    return h


def _best_from_completions(scores: LatticeScores, span: Tuple[int, int], h: np.ndarray) -> TagSeq:
    # Forward trace picking the smallest tag among optimal choices, which
    # yields the lexicographically smallest best path.
    s, e = span
    p = scores.emissions
    cand = scores.start_transitions + p[:, s] + h[0]
    tags = [int(np.argmax(cand))]
    for j in range(1, e - s):
        cand = scores.transitions[tags[-1]] + p[:, s + j] + h[j]
        tags.append(int(np.argmax(cand)))
    return tuple(tags)


def viterbi_best(scores: LatticeScores, span: Tuple[int, int]) -> DecodedPath:
    span = scores.check_span(span)
    h = _completions(scores, span)
    tags = _best_from_completions(scores, span, h)
    return DecodedPath(tags, path_score(scores, span, tags))


def _astar_second(scores: LatticeScores, span: Tuple[int, int], exclude: TagSeq, h: np.ndarray) -> TagSeq:
    """A* over partial paths with the exact completion heuristic ``h``.

    Complete paths leave the queue in descending score order, so the first
    one that is not ``exclude`` is the runner-up.
    """
    s, e = span
    width = e - s
    p = scores.emissions
    trans = scores.transitions
    heap = []
    first = scores.start_transitions + p[:, s]
    for c in range(NUM_TAGS):
        f = first[c] + h[0, c]
        if f > -np.inf:
            heap.append((-f, (c,), float(first[c])))
    heapq.heapify(heap)
    while heap:
        _, tags, g = heapq.heappop(heap)
        if len(tags) == width:
            if tags != exclude:
                return tags
            continue
        j = len(tags)
        step = trans[tags[-1]] + p[:, s + j]
        for c in range(NUM_TAGS):
            if step[c] == -np.inf:
                continue
            g2 = g + float(step[c])
            f = g2 + h[j, c]
            if f > -np.inf:
                heapq.heappush(heap, (-f, tags + (c,), g2))
    raise ExhaustedError(f"no legal path other than the best one in span {span}")


def viterbi_second_best(scores: LatticeScores, span: Tuple[int, int], best: Optional[DecodedPath] = None) -> DecodedPath:
    span = scores.check_span(span)
    h = _completions(scores, span)
    exclude = best.tags if best is not None else _best_from_completions(scores, span, h)
    tags = _astar_second(scores, span, tuple(exclude), h)
    return DecodedPath(tags, path_score(scores, span, tags))


def nested_decode(
    all_scores: Sequence[LatticeScores],
    n: Optional[int] = None,
    max_depth: Optional[int] = None,
    stats: Optional[DecodeStats] = None,
) -> List[Mention]:
    """Extract nested mentions outside-in, one entity type at a time.

    The whole sentence is decoded with the best path; every multi-token
    mention found is then searched for its second-best path, depth first,
    until no multi-token mention remains or ``max_depth`` levels were decoded
    (``None`` means unlimited).
    """
    if max_depth is not None and max_depth < 1:
        raise ValueError("max_depth must be positive or None")
    if n is None:
        n = all_scores[0].n if all_scores else 0
    found: Set[Mention] = set()
    for scores in all_scores:
        if scores.n != n:
            raise ShapeError(f"lattice for {scores.entity_type!r} has length {scores.n}, expected {n}")
        k = scores.entity_type
        if stats is not None:
            stats.record(k, (0, n))
            stats.record_query(k, (0, n))
        h_top = _completions(scores, (0, n))
        best_top = _best_from_completions(scores, (0, n), h_top)
        top = mentions_from_tags(best_top, 0, k)
        found.update(top)
        stack = [(m, 2) for m in reversed(top)]
        while stack:
            parent, depth = stack.pop()
            if parent.width <= 1 or (max_depth is not None and depth > max_depth):
                continue
            span = (parent.start, parent.end)
            if stats is not None:
                stats.record_query(k, span)
            if span == (0, n):
                # A mention covering the sentence reuses the level-1 table.
                tags = _astar_second(scores, span, best_top, h_top)
            else:
                if stats is not None:
                    stats.record(k, span)
                tags = viterbi_second_best(scores, span).tags
            inner = mentions_from_tags(tags, parent.start, k)
            found.update(inner)
            # A runner-up covering the whole span would re-query the same span.
            stack.extend((m, depth + 1) for m in reversed(inner) if m != parent)
    return sorted(found, key=lambda m: (str(m.entity_type), m.start, m.end))
