"""IOBES tag alphabet, transition legality and nested-mention levelization.

Token indices are 0-based and spans are half-open ``[start, end)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum
from typing import Dict, Hashable, Iterable, List, NamedTuple, Optional, Sequence, Tuple


class Tag(IntEnum):
    # Order doubles as the decoder's tie-break order.
    B = 0
    I = 1  # noqa: E741
    E = 2
    S = 3
    O = 4  # noqa: E741
    START = 5
    END = 6


#: The five in-sequence tags of one entity type.
TAGS: Tuple[Tag, ...] = (Tag.B, Tag.I, Tag.E, Tag.S, Tag.O)
NUM_TAGS = len(TAGS)

TagSeq = Tuple[int, ...]


class TaggingError(ValueError):
    """Base class for tag/mention consistency errors."""


class MalformedTagsError(TaggingError):
    def __init__(self, position: int, message: str):
        super().__init__(f"malformed IOBES sequence at position {position}: {message}")
        self.position = position


class OverlapError(TaggingError):
    pass


class SpanBoundsError(TaggingError):
    pass


class CrossingEntitiesError(TaggingError):
    def __init__(self, first: "Mention", second: "Mention"):
        super().__init__(
            f"crossing mentions of type {first.entity_type!r}: "
            f"[{first.start}, {first.end}) and [{second.start}, {second.end})"
        )
        self.first = first
        self.second = second


class Mention(NamedTuple):
    start: int
    end: int
    entity_type: Hashable

    @property
    def width(self) -> int:
        return self.end - self.start

    def contains(self, other: "Mention") -> bool:
        """True when ``other`` lies inside this span (equality included)."""
        return self.start <= other.start and other.end <= self.end

    def crosses(self, other: "Mention") -> bool:
        return (self.start < other.start < self.end < other.end) or (
            other.start < self.start < other.end < self.end
        )


_BEGIN_SIDE = (Tag.START, Tag.O, Tag.E, Tag.S)
_OPEN = (Tag.B, Tag.I)


def is_legal_transition(prev: int, nxt: int) -> bool:
    """Whether ``prev -> nxt`` is a legal IOBES adjacency.

    ``prev`` may be START and ``nxt`` may be END; the reverse is a caller error.
    """
    if prev == Tag.END or nxt == Tag.START:
        raise ValueError("END cannot precede and START cannot follow another tag")
    if prev in _BEGIN_SIDE:
        return nxt in (Tag.B, Tag.S, Tag.O, Tag.END)
    # prev is B or I: the mention must continue.
    return nxt in (Tag.I, Tag.E)


def check_well_formed(tags: Sequence[int]) -> None:
    """Raise :class:`MalformedTagsError` at the first illegal position."""
    prev = Tag.START
    for i, t in enumerate(tags):
        if t not in TAGS:
            raise MalformedTagsError(i, f"unknown tag {t!r}")
        if not is_legal_transition(prev, t):
            raise MalformedTagsError(i, f"{Tag(prev).name} -> {Tag(t).name} is illegal")
        prev = t
    if not is_legal_transition(prev, Tag.END):
        raise MalformedTagsError(len(tags), f"dangling {Tag(prev).name} at end of span")


def is_well_formed(tags: Sequence[int]) -> bool:
    try:
        check_well_formed(tags)
    except MalformedTagsError:
        return False
    return True


def mentions_from_tags(tags: Sequence[int], span_offset: int, entity_type: Hashable) -> List[Mention]:
    check_well_formed(tags)
    out = []
    begin = None
    for i, t in enumerate(tags):
        if t == Tag.S:
            out.append(Mention(span_offset + i, span_offset + i + 1, entity_type))
        elif t == Tag.B:
            begin = i
        elif t == Tag.E:
            out.append(Mention(span_offset + begin, span_offset + i + 1, entity_type))
            begin = None
    return out


def tags_from_mentions(mentions: Iterable[Mention], span: Tuple[int, int]) -> TagSeq:
    """Encode non-overlapping mentions inside ``span`` as an IOBES sequence."""
    s, e = span
    if e <= s:
        raise SpanBoundsError(f"empty span {span}")
    tags = [int(Tag.O)] * (e - s)
    for m in sorted(mentions, key=lambda m: (m.start, m.end)):
        if m.start < s or m.end > e or m.start >= m.end:
            raise SpanBoundsError(f"mention [{m.start}, {m.end}) outside span [{s}, {e})")
        if any(tags[i] != Tag.O for i in range(m.start - s, m.end - s)):
            raise OverlapError(f"mention [{m.start}, {m.end}) overlaps another mention")
        if m.width == 1:
            tags[m.start - s] = Tag.S
        else:
            tags[m.start - s] = Tag.B
            for i in range(m.start - s + 1, m.end - s - 1):
                tags[i] = Tag.I
            tags[m.end - s - 1] = Tag.E
    return tuple(int(t) for t in tags)


def parent_tagging(width: int) -> TagSeq:
    """The tagging a single mention gives its own span: S, or B I... E."""
    if width == 1:
        return (int(Tag.S),)
    return (int(Tag.B),) + (int(Tag.I),) * (width - 2) + (int(Tag.E),)


def assign_levels(mentions: Iterable[Mention], strict: bool = True) -> Dict[Mention, int]:
    """Nesting level of each mention among mentions of its own type.

    Level 1 is outermost; otherwise 1 + the level of the smallest same-type
    mention strictly containing it. With ``strict`` crossing pairs raise
    :class:`CrossingEntitiesError`; otherwise they are ignored.
    """
    unique = sorted(set(mentions), key=lambda m: (str(m.entity_type), m.start, -m.end))
    levels: Dict[Mention, int] = {}
    by_type: Dict[Hashable, List[Mention]] = {}
    for m in unique:
        by_type.setdefault(m.entity_type, []).append(m)
    for group in by_type.values():
        # Sorted by (start, -end): every container precedes what it contains.
        for j, m in enumerate(group):
            parent_level = 0
            parent_width = None
            for other in group[:j]:
                if other.contains(m):
                    if parent_width is None or other.width < parent_width:
                        parent_width = other.width
                        parent_level = levels[other]
                elif strict and other.crosses(m):
                    raise CrossingEntitiesError(other, m)
            levels[m] = parent_level + 1
    return levels


@dataclass(frozen=True)
class GoldRecord:
    """Target tag sequence over one span at one level.

    ``parent`` is the mention whose extent the span is (None at level 1).
    """

    span: Tuple[int, int]
    tags: TagSeq
    parent: Optional[Mention] = None


@dataclass
class LevelizedGold:
    n: int
    levels: Dict[Hashable, List[List[GoldRecord]]] = field(default_factory=dict)

    def records(self, entity_type: Hashable):
        """Yield ``(level, record)`` pairs, level numbering from 1."""
        for depth, level in enumerate(self.levels.get(entity_type, ()), start=1):
            for rec in level:
                yield depth, rec

    def mentions(self) -> List[Mention]:
        out = set()
        for k in self.levels:
            for _, rec in self.records(k):
                out.update(mentions_from_tags(rec.tags, rec.span[0], k))
        return sorted(out, key=lambda m: (str(m.entity_type), m.start, m.end))

    def depth(self, entity_type: Hashable) -> int:
        return len(self.levels.get(entity_type, ()))


def levelize(
    mentions: Iterable[Mention],
    n: int,
    types: Sequence[Hashable],
    include_leaf_spans: bool = True,
) -> LevelizedGold:
    """Organise gold mentions into per-type, per-level target sequences.

    With ``include_leaf_spans`` every multi-token mention gets a child record,
    all-O when nothing of its type is nested inside it.
    """
    mentions = set(mentions)
    for m in mentions:
        if not (0 <= m.start < m.end <= n):
            raise SpanBoundsError(f"mention [{m.start}, {m.end}) outside sentence of length {n}")
    levels = assign_levels(mentions)
    gold = LevelizedGold(n=n)
    for k in types:
        mine = [m for m in mentions if m.entity_type == k]
        top = [m for m in mine if levels[m] == 1]
        out = [[GoldRecord((0, n), tags_from_mentions(top, (0, n)))]]
        frontier = top
        depth = 1
        while True:
            records = []
            for parent in sorted(frontier, key=lambda m: (m.start, m.end)):
                if parent.width == 1:
                    continue
                children = [m for m in mine if levels[m] == depth + 1 and parent.contains(m)]
                if not children and not include_leaf_spans:
                    continue
                span = (parent.start, parent.end)
                records.append(GoldRecord(span, tags_from_mentions(children, span), parent))
            if not records:
                break
            out.append(records)
            depth += 1
            frontier = [m for m in mine if levels[m] == depth]
        gold.levels[k] = out
    return gold
