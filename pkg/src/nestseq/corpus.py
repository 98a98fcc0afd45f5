"""JSON-lines corpus of nested mention annotations, statistics and synthetic data.

One document per line::

    {"tokens": ["in", "Ca2+", ...], "mentions": [[1, 5, "protein"], ...], "id": "optional"}

Mention spans are 0-based and half-open.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .tagging import CrossingEntitiesError, Mention, Tag, assign_levels, levelize

log = logging.getLogger(__name__)


class CorpusError(ValueError):
    def __init__(self, message: str, line: Optional[int] = None, field_name: Optional[str] = None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field_name is not None:
            where.append(f"field {field_name!r}")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)
        self.line = line
        self.field = field_name


class ConfigError(ValueError):
    pass


@dataclass
class Document:
    tokens: List[str]
    mentions: List[Mention] = field(default_factory=list)
    id: Optional[str] = None

    def __len__(self):
        return len(self.tokens)

    def types(self):
        return {m.entity_type for m in self.mentions}


def _sorted_mentions(mentions: Iterable[Mention]) -> List[Mention]:
    return sorted(mentions, key=lambda m: (m.start, m.end, str(m.entity_type)))


def validate_document(doc: Document, line: Optional[int] = None) -> int:
    """Check bounds and non-crossing; drop duplicates in place, returning how many."""
    if not doc.tokens:
        raise CorpusError("document has no tokens", line, "tokens")
    for i, tok in enumerate(doc.tokens):
        if not isinstance(tok, str) or not tok:
            raise CorpusError(f"token {i} is not a non-empty string", line, "tokens")
        if any(ch in tok for ch in "\t\n\r"):
            raise CorpusError(f"token {i} contains a tab or newline", line, "tokens")
    n = len(doc.tokens)
    for m in doc.mentions:
        if not (0 <= m.start < m.end <= n):
            raise CorpusError(f"mention {list(m)} out of bounds for {n} tokens", line, "mentions")
    unique = _sorted_mentions(set(doc.mentions))
    dropped = len(doc.mentions) - len(unique)
    try:
        assign_levels(unique)
    except CrossingEntitiesError as exc:
        raise CorpusError(str(exc), line, "mentions") from exc
    doc.mentions = unique
    return dropped


def _parse_line(text: str, line: int) -> Document:
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CorpusError(f"malformed JSON: {exc.msg} (column {exc.colno})", line) from exc
    if not isinstance(obj, dict):
        raise CorpusError("expected a JSON object", line)
    unknown = set(obj) - {"tokens", "mentions", "id"}
    if unknown:
        raise CorpusError(f"unknown fields {sorted(unknown)}", line)
    tokens = obj.get("tokens")
    if not isinstance(tokens, list):
        raise CorpusError("must be a list of strings", line, "tokens")
    raw = obj.get("mentions", [])
    if not isinstance(raw, list):
        raise CorpusError("must be a list", line, "mentions")
    mentions = []
    for j, item in enumerate(raw):
        ok = (
            isinstance(item, list)
            and len(item) == 3
            and all(isinstance(x, int) and not isinstance(x, bool) for x in item[:2])
            and isinstance(item[2], str)
        )
        if not ok:
            raise CorpusError(f"entry {j} must be [start:int, end:int, type:str]", line, "mentions")
        mentions.append(Mention(item[0], item[1], item[2]))
    doc_id = obj.get("id")
    if doc_id is not None and not isinstance(doc_id, str):
        raise CorpusError("must be a string", line, "id")
    return Document(tokens, mentions, doc_id)


def parse_corpus(lines: Iterable[str]) -> List[Document]:
    docs = []
    dropped = 0
    for line_no, text in enumerate(lines, start=1):
        if not text.strip():
            continue
        doc = _parse_line(text, line_no)
        dropped += validate_document(doc, line_no)
        docs.append(doc)
    if dropped:
        log.warning("removed %d duplicate mention(s)", dropped)
    return docs


def read_corpus(path) -> List[Document]:
    with open(path, encoding="utf-8") as fh:
        return parse_corpus(fh)


def format_document(doc: Document, by_type: bool = False) -> str:
    """One JSON line; mentions ordered by position, or by ``(type, start, end)``."""
    if by_type:
        mentions = sorted(doc.mentions, key=lambda m: (str(m.entity_type), m.start, m.end))
    else:
        mentions = _sorted_mentions(doc.mentions)
    obj = {
        "tokens": list(doc.tokens),
        "mentions": [[m.start, m.end, m.entity_type] for m in mentions],
    }
    if doc.id is not None:
        obj["id"] = doc.id
    return json.dumps(obj, ensure_ascii=False)


def write_corpus(docs: Iterable[Document], path, by_type: bool = False) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for doc in docs:
            fh.write(format_document(doc, by_type) + "\n")


def corpus_types(docs: Iterable[Document]) -> List[str]:
    return sorted({m.entity_type for d in docs for m in d.mentions}, key=str)


@dataclass
class CorpusStats:
    sentences: int
    tokens: int
    mentions: int
    level_counts: List[int]
    labels_per_token: float
    max_depth: int
    types: List[str]

    def to_dict(self) -> Dict:
        return {
            "sentences": self.sentences,
            "tokens": self.tokens,
            "mentions": self.mentions,
            "level_counts": list(self.level_counts),
            "labels_per_token": self.labels_per_token,
            "max_depth": self.max_depth,
            "types": list(self.types),
        }


def corpus_stats(docs: Sequence[Document], types: Optional[Sequence[str]] = None) -> CorpusStats:
    """Sentence/mention counts per nesting level and the labels-per-token ``d``.

    ``d`` averages, over every (token, entity type) pair, the number of gold
    IOBES tags the token carries for that type: its level-1 tag (O included)
    plus one per deeper level where it is tagged B, I, E or S. All-O child
    records of leaf mentions add nothing, so a corpus without same-type
    nesting has ``d == 1``.
    """
    types = list(types) if types is not None else corpus_types(docs)
    level_counts: List[int] = []
    n_tokens = 0
    extra_labels = 0
    for doc in docs:
        n_tokens += len(doc.tokens)
        for m, level in assign_levels(doc.mentions).items():
            while len(level_counts) < level:
                level_counts.append(0)
            level_counts[level - 1] += 1
        gold = levelize(doc.mentions, len(doc.tokens), types, include_leaf_spans=False)
        for k in types:
            for level, rec in gold.records(k):
                if level > 1:
                    extra_labels += sum(1 for t in rec.tags if t != Tag.O)
    pairs = n_tokens * max(len(types), 1)
    d = 1.0 + extra_labels / pairs if pairs else 1.0
    return CorpusStats(
        sentences=len(docs),
        tokens=n_tokens,
        mentions=sum(level_counts),
        level_counts=level_counts,
        labels_per_token=d,
        max_depth=len(level_counts),
        types=types,
    )


@dataclass
class SynthConfig:
    n_sentences: int = 300
    vocab: int = 30
    types: Tuple[str, ...] = ("protein", "cell")
    max_depth: int = 3
    nesting_rate: float = 0.25
    seed: int = 0
    min_len: int = 6
    max_len: int = 20
    mention_rate: float = 0.2
    cross_rate: float = 0.1
    pool_size: int = 12


def _check_config(cfg: SynthConfig) -> None:
    if cfg.n_sentences < 0:
        raise ConfigError("n_sentences must be non-negative")
    if not cfg.types:
        raise ConfigError("at least one entity type is required")
    if len(set(cfg.types)) != len(cfg.types):
        raise ConfigError("entity types must be distinct")
    if cfg.vocab < 1 or cfg.pool_size < 1:
        raise ConfigError("vocab and pool_size must be positive")
    if cfg.max_depth < 1:
        raise ConfigError("max_depth must be at least 1")
    if not (1 <= cfg.min_len <= cfg.max_len):
        raise ConfigError("need 1 <= min_len <= max_len")
    if cfg.max_depth > cfg.min_len:
        raise ConfigError(f"max_depth {cfg.max_depth} cannot fit in sentences of {cfg.min_len} tokens")
    for name in ("nesting_rate", "mention_rate", "cross_rate"):
        if not 0.0 <= getattr(cfg, name) <= 1.0:
            raise ConfigError(f"{name} must lie in [0, 1]")


class _Grammar:
    """Lexical rules: every mention boundary is marked by type-specific words.

    Words are spelled ``<type><index><kind>`` so the kind is the last letter.
    """

    def __init__(self, cfg: SynthConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.rng = rng

    def word(self, kind: str, k: str) -> str:
        return f"{k}{int(self.rng.integers(self.cfg.pool_size))}{kind}"

    def leaf(self, k: str) -> List[str]:
        width = int(self.rng.choice([1, 2, 3], p=[0.4, 0.4, 0.2]))
        return [self.word("m", k) for _ in range(width - 1)] + [self.word("h", k)]

    def mention(self, k: str, force_depth: int = 0):
        """Tokens and relative spans of one top-level mention of type ``k``.

        The nesting chain is a leaf wrapped once per extra level; prefix
        wrappers (``o``) always sit outside suffix wrappers (``q``), which
        makes the bracketing recoverable from the words alone.
        """
        cfg = self.cfg
        depth = 1
        while depth < cfg.max_depth and (depth < force_depth or self.rng.random() < cfg.nesting_rate):
            depth += 1
        if depth == 1 and len(cfg.types) > 1 and not force_depth and self.rng.random() < cfg.cross_rate:
            others = [t for t in cfg.types if t != k]
            inner, spans = self.mention(others[int(self.rng.integers(len(others)))])
            toks = [self.word("x", k)] + inner + [self.word("y", k)]
            return toks, [(0, len(toks), k)] + [(s + 1, e + 1, t) for s, e, t in spans]
        n_prefix = int(self.rng.integers(0, depth))
        toks = self.leaf(k)
        spans = [(0, len(toks), k)]
        for _ in range(depth - 1 - n_prefix):
            toks = toks + [self.word("q", k)]
            spans.append((0, len(toks), k))
        for _ in range(n_prefix):
            toks = [self.word("o", k)] + toks
            spans = [(s + 1, e + 1, t) for s, e, t in spans] + [(0, len(toks), k)]
        return toks, spans

    def sentence(self, force_depth: int = 0) -> Document:
        cfg = self.cfg
        target = int(self.rng.integers(cfg.min_len, cfg.max_len + 1))
        tokens: List[str] = []
        mentions: List[Mention] = []
        forced = force_depth > 0
        while len(tokens) < target:
            # Mentions never touch: a filler word separates neighbours.
            boundary_ok = not mentions or max(m.end for m in mentions) < len(tokens)
            if forced or (boundary_ok and self.rng.random() < cfg.mention_rate):
                k = cfg.types[0] if forced else cfg.types[int(self.rng.integers(len(cfg.types)))]
                toks, spans = self.mention(k, force_depth if forced else 0)
                if len(tokens) + len(toks) > cfg.max_len and not forced:
                    break
                forced = False
                off = len(tokens)
                tokens.extend(toks)
                mentions.extend(Mention(s + off, e + off, t) for s, e, t in spans)
            else:
                tokens.append(f"w{int(self.rng.integers(cfg.vocab))}")
        return Document(tokens, _sorted_mentions(set(mentions)))


def generate_synthetic(config: Optional[SynthConfig] = None, **overrides) -> List[Document]:
    """Deterministic nested corpus whose mentions follow learnable lexical rules.

    Words are spelled ``<type><index><kind>``. A mention of type ``k`` is a
    head word (kind ``h``) optionally led by modifiers (``m``); each nesting
    level adds a same-type prefix (``o``) or suffix (``q``) wrapper, and a
    mention of another type can be wrapped by ``x ... y`` words. When
    ``nesting_rate`` is positive the first sentence always reaches
    ``max_depth``.
    """
    cfg = config or SynthConfig()
    if overrides:
        cfg = SynthConfig(**{**cfg.__dict__, **overrides})
    _check_config(cfg)
    grammar = _Grammar(cfg, np.random.default_rng(cfg.seed))
    docs = []
    for i in range(cfg.n_sentences):
        force = cfg.max_depth if (i == 0 and cfg.nesting_rate > 0) else 0
        doc = grammar.sentence(force)
        doc.id = f"synth-{cfg.seed}-{i}"
        docs.append(doc)
    return docs
