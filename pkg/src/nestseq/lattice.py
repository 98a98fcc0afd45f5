"""Per-type emission/transition scores and the path score function."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Hashable, Sequence, Tuple

import numpy as np

from .tagging import NUM_TAGS, TAGS, Tag, is_legal_transition

NEG_INF = float("-inf")


def _build_transitions():
    inner = np.full((NUM_TAGS, NUM_TAGS), NEG_INF)
    start = np.full(NUM_TAGS, NEG_INF)
    end = np.full(NUM_TAGS, NEG_INF)
    for a in TAGS:
        start[a] = 0.0 if is_legal_transition(Tag.START, a) else NEG_INF
        end[a] = 0.0 if is_legal_transition(a, Tag.END) else NEG_INF
        for b in TAGS:
            inner[a, b] = 0.0 if is_legal_transition(a, b) else NEG_INF
    for arr in (inner, start, end):
        arr.setflags(write=False)
    return inner, start, end


# Fixed 0/-inf matrices shared by every entity type.
_TRANSITIONS, _START, _END = _build_transitions()


class ShapeError(ValueError):
    pass


@dataclass(frozen=True)
class LatticeScores:
    """Emissions ``P`` (shape ``5 x n``) and fixed IOBES transitions for one type."""

    entity_type: Hashable
    emissions: np.ndarray

    def __post_init__(self):
        p = np.array(self.emissions, dtype=np.float64)
        if p.ndim != 2 or p.shape[0] != NUM_TAGS or p.shape[1] < 1:
            raise ShapeError(f"emissions must have shape (5, n>=1), got {p.shape}")
        if not np.all(np.isfinite(p)):
            raise ValueError("emission scores must be finite")
        p.setflags(write=False)
        object.__setattr__(self, "emissions", p)

    @property
    def n(self) -> int:
        return self.emissions.shape[1]

    @property
    def transitions(self) -> np.ndarray:
        return _TRANSITIONS

    @property
    def start_transitions(self) -> np.ndarray:
        return _START

    @property
    def end_transitions(self) -> np.ndarray:
        return _END

    def check_span(self, span: Tuple[int, int]) -> Tuple[int, int]:
        s, e = span
        if not (0 <= s < e <= self.n):
            raise IndexError(f"span {span} invalid for lattice of length {self.n}")
        return s, e


def transition_score(prev: int, cur: int) -> float:
    """Entry of the fixed transition matrix, START rows/END columns included."""
    if prev == Tag.START:
        return float(_START[cur]) if cur != Tag.END else NEG_INF
    if cur == Tag.END:
        return float(_END[prev])
    return float(_TRANSITIONS[prev, cur])


def phi(scores: LatticeScores, prev: int, cur: int, i: int) -> float:
    if not 0 <= i < scores.n:
        raise IndexError(f"position {i} outside lattice of length {scores.n}")
    return float(scores.emissions[cur, i]) + transition_score(prev, cur)


def path_score(scores: LatticeScores, span: Tuple[int, int], tags: Sequence[int]) -> float:
    s, e = scores.check_span(span)
    if len(tags) != e - s:
        raise ShapeError(f"{len(tags)} tags for a span of width {e - s}")
    total = 0.0
    prev = Tag.START
    for offset, t in enumerate(tags):
        total += phi(scores, prev, t, s + offset)
        prev = t
    return total + transition_score(prev, Tag.END)
