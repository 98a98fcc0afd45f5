"""Brute-force references for the dynamic programs, decoder and gradient.

Everything here works by enumerating all 5**width tag sequences of a span
and shares nothing with the checked modules except the transition legality
rule from :mod:`nestseq.tagging`.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Dict, Hashable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import logsumexp

from .tagging import TAGS, Mention, Tag, is_legal_transition

MAX_WIDTH = 10


class OracleCapError(ValueError):
    """Span too wide to enumerate."""


@lru_cache(maxsize=None)
def _all_sequences(width: int) -> Tuple[np.ndarray, np.ndarray]:
    """Every tag sequence of ``width`` in lexicographic order plus a legality mask."""
    seqs = np.array(list(itertools.product([int(t) for t in TAGS], repeat=width)), dtype=np.int64)
    seqs = seqs.reshape(-1, width)
    legal = np.array([is_legal_transition(Tag.START, row[0]) and is_legal_transition(row[-1], Tag.END)
                      for row in seqs.tolist()], dtype=bool)
    for j in range(width - 1):
        pair_ok = np.array([[is_legal_transition(a, b) for b in TAGS] for a in TAGS])
        legal &= pair_ok[seqs[:, j], seqs[:, j + 1]]
    seqs.setflags(write=False)
    legal.setflags(write=False)
    return seqs, legal


def _emissions(scores) -> np.ndarray:
    return np.asarray(scores.emissions if hasattr(scores, "emissions") else scores, dtype=np.float64)


def _scored(scores, span: Tuple[int, int]) -> Tuple[np.ndarray, np.ndarray]:
    s, e = span
    width = e - s
    if width > MAX_WIDTH:
        raise OracleCapError(f"span width {width} exceeds enumeration cap {MAX_WIDTH}")
    if width < 1:
        raise ValueError(f"empty span {span}")
    p = _emissions(scores)
    seqs, legal = _all_sequences(width)
    totals = p[seqs, np.arange(s, e)[None, :]].sum(axis=1)
    totals = np.where(legal, totals, -np.inf)
    return seqs, totals


def _rank(totals: np.ndarray) -> np.ndarray:
    # Stable: equal scores keep lexicographic (B < I < E < S < O) order.
    return np.argsort(-totals, kind="stable")


def oracle_path_score(scores, span: Tuple[int, int], tags: Sequence[int]) -> float:
    p = _emissions(scores)
    chain = [Tag.START, *tags, Tag.END]
    if any(not is_legal_transition(a, b) for a, b in zip(chain, chain[1:])):
        return -math.inf
    return float(sum(p[t, span[0] + j] for j, t in enumerate(tags)))


def enumerate_paths(scores, span: Tuple[int, int]) -> List[Tuple[Tuple[int, ...], float]]:
    """All sequences of the span with their scores, best first, illegal ones last."""
    seqs, totals = _scored(scores, span)
    return [(tuple(int(t) for t in seqs[i]), float(totals[i])) for i in _rank(totals)]


def oracle_top_paths(scores, span: Tuple[int, int], k: int = 2) -> List[Tuple[Tuple[int, ...], float]]:
    seqs, totals = _scored(scores, span)
    order = _rank(totals)[:k]
    return [(tuple(int(t) for t in seqs[i]), float(totals[i])) for i in order]


def oracle_log_partition(scores, span: Tuple[int, int]) -> float:
    _, totals = _scored(scores, span)
    return float(logsumexp(totals))


def oracle_log_partition_except_best(scores, span: Tuple[int, int], best: Optional[Sequence[int]] = None) -> float:
    """Log-sum-exp over every path but ``best`` (default: the top-ranked path)."""
    seqs, totals = _scored(scores, span)
    if best is None:
        drop = _rank(totals)[0]
    else:
        match = np.all(seqs == np.asarray(best)[None, :], axis=1)
        drop = int(np.flatnonzero(match)[0])
    return float(logsumexp(np.delete(totals, drop)))


def _mentions(tags: Sequence[int], offset: int, k) -> List[Mention]:
    out, begin = [], None
    for j, t in enumerate(tags):
        if t == Tag.S:
            out.append(Mention(offset + j, offset + j + 1, k))
        elif t == Tag.B:
            begin = j
        elif t == Tag.E:
            out.append(Mention(offset + begin, offset + j + 1, k))
    return out


def oracle_nested_decode(all_scores, n: int, max_depth: Optional[int] = None) -> List[Mention]:
    found = set()

    def visit(scores, k, m, depth):
        if m.width <= 1 or (max_depth is not None and depth > max_depth):
            return
        second = oracle_top_paths(scores, (m.start, m.end), 2)[1][0]
        inner = _mentions(second, m.start, k)
        found.update(inner)
        for c in inner:
            if c != m:
                visit(scores, k, c, depth + 1)

    for scores in all_scores:
        k = scores.entity_type
        best = oracle_top_paths(scores, (0, n), 1)[0][0]
        top = _mentions(best, 0, k)
        found.update(top)
        for m in top:
            visit(scores, k, m, 2)
    return sorted(found, key=lambda m: (str(m.entity_type), m.start, m.end))


def _own_tagging(width: int) -> Tuple[int, ...]:
    if width == 1:
        return (int(Tag.S),)
    return (int(Tag.B),) + (int(Tag.I),) * (width - 2) + (int(Tag.E),)


def oracle_type_loglik(emissions: np.ndarray, records, flat: bool = False) -> float:
    """Enumeration-based log-likelihood of one type's levelized gold.

    ``records`` yields ``(level, span, tags)``; deeper levels exclude the
    tagging of the mention whose extent the span is.
    """
    total = 0.0
    for level, span, tags in records:
        if level > 1 and flat:
            continue
        gold = oracle_path_score(emissions, span, tags)
        if level == 1:
            total += gold - oracle_log_partition(emissions, span)
        else:
            own = _own_tagging(span[1] - span[0])
            total += gold - oracle_log_partition_except_best(emissions, span, own)
    return total


def _records(gold, k):
    return [(level, rec.span, rec.tags) for level, rec in gold.records(k)]


def oracle_sentence_loss(all_scores, gold, flat: bool = False) -> float:
    return -sum(oracle_type_loglik(_emissions(sc), _records(gold, sc.entity_type), flat) for sc in all_scores)


def central_differences(fn: Callable[[np.ndarray], float], x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        orig = x[idx]
        x[idx] = orig + h
        up = fn(x)
        x[idx] = orig - h
        down = fn(x)
        x[idx] = orig
        grad[idx] = (up - down) / (2 * h)
    return grad


def oracle_gradient(all_scores, gold, h: float = 1e-5, flat: bool = False) -> Dict[Hashable, np.ndarray]:
    """Central finite differences of the enumerated loss w.r.t. every emission."""
    out = {}
    for sc in all_scores:
        recs = _records(gold, sc.entity_type)
        out[sc.entity_type] = central_differences(lambda p: -oracle_type_loglik(p, recs, flat), _emissions(sc), h)
    return out


def oracle_crf_marginals(scores) -> np.ndarray:
    """Per-token tag marginals of the plain CRF over the whole lattice.

    Probability-space forward-backward with per-step rescaling.
    """
    p = _emissions(scores)
    n = p.shape[1]
    allowed = np.array([[is_legal_transition(a, b) for b in TAGS] for a in TAGS], dtype=float)
    start = np.array([is_legal_transition(Tag.START, b) for b in TAGS], dtype=float)
    end = np.array([is_legal_transition(a, Tag.END) for a in TAGS], dtype=float)
    shift = p.max(axis=0)
    pot = np.exp(p - shift[None, :])
    fwd = np.zeros((n, len(TAGS)))
    bwd = np.zeros((n, len(TAGS)))
    fwd[0] = start * pot[:, 0]
    fwd[0] /= fwd[0].sum()
    for i in range(1, n):
        fwd[i] = (fwd[i - 1] @ allowed) * pot[:, i]
        fwd[i] /= fwd[i].sum()
    bwd[-1] = end
    for i in range(n - 2, -1, -1):
        bwd[i] = allowed @ (pot[:, i + 1] * bwd[i + 1])
        bwd[i] /= bwd[i].sum()
    marg = fwd * bwd
    marg /= marg.sum(axis=1, keepdims=True)
    return marg.T


def random_nested_mentions(n: int, rng: np.random.Generator, types: Sequence[Hashable] = ("X",),
                           max_depth: int = 3, rate: float = 0.5) -> List[Mention]:
    """Random non-crossing mentions, each type nested at most ``max_depth`` deep."""
    out = []

    def fill(a, b, k, depth):
        i = a
        while i < b:
            if rng.random() < rate:
                width = int(rng.integers(1, b - i + 1))
                m = Mention(i, i + width, k)
                # Strictly smaller child spans only.
                if depth < max_depth and width > 1 and rng.random() < 0.7:
                    lo = int(rng.integers(m.start, m.end))
                    hi = int(rng.integers(lo + 1, m.end + 1))
                    if (lo, hi) != (m.start, m.end):
                        fill(lo, hi, k, depth + 1)
                out.append(m)
                i += width
            else:
                i += 1

    for k in types:
        fill(0, n, k, 1)
    return sorted(set(out), key=lambda m: (str(m.entity_type), m.start, m.end))


DP_TOLERANCE = 1e-9
GRAD_TOLERANCE = 1e-6


@dataclass
class CheckReport:
    """Worst deviations between the fast modules and the brute-force references."""

    cases: int = 0
    gradient_cases: int = 0
    path_mismatches: int = 0
    nested_mismatches: int = 0
    log_partition: float = 0.0
    except_best: float = 0.0
    gradient: float = 0.0
    errors: List[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return (not self.errors and self.path_mismatches == 0 and self.nested_mismatches == 0
                and self.log_partition < DP_TOLERANCE and self.except_best < DP_TOLERANCE
                and self.gradient < GRAD_TOLERANCE)

    def lines(self) -> List[str]:
        return [
            f"cases            {self.cases}",
            f"gradient cases   {self.gradient_cases}",
            f"path mismatches  {self.path_mismatches}",
            f"nested mismatch  {self.nested_mismatches}",
            f"log partition    {self.log_partition:.3e}  (tol {DP_TOLERANCE:.0e})",
            f"except best      {self.except_best:.3e}  (tol {DP_TOLERANCE:.0e})",
            f"gradient         {self.gradient:.3e}  (tol {GRAD_TOLERANCE:.0e})",
            *[f"error            {e}" for e in self.errors[:5]],
        ]


def _deviation(a: float, b: float) -> float:
    if a == b:
        return 0.0
    return abs(a - b) if math.isfinite(a) and math.isfinite(b) else math.inf


def cross_check(cases: int = 1000, seed: int = 0, gradient_every: int = 10) -> CheckReport:
    """Compare decoding, partitions and gradients against enumeration.

    Each case is a random lattice with ``n`` in [1, 7] and emissions uniform
    in [-5, 5]. Every ``gradient_every``-th case also checks the loss gradient
    on a random nested gold set over two types with ``n <= 6``.
    """
    # Imported here so the references above stay independent of these modules.
    from .decode import nested_decode, viterbi_best, viterbi_second_best
    from .lattice import LatticeScores
    from .objective import log_partition, log_partition_except_best, sentence_loss_grad
    from .tagging import levelize

    rng = np.random.default_rng(seed)
    report = CheckReport()
    for case in range(cases):
        report.cases += 1
        n = int(rng.integers(1, 8))
        p = rng.uniform(-5, 5, size=(len(TAGS), n))
        try:
            sc = LatticeScores("X", p)
            ranked = oracle_top_paths(p, (0, n), 2)
            best = viterbi_best(sc, (0, n))
            second = viterbi_second_best(sc, (0, n), best)
            if best.tags != ranked[0][0] or second.tags != ranked[1][0]:
                report.path_mismatches += 1
            report.log_partition = max(report.log_partition,
                                       _deviation(log_partition(sc, (0, n)), oracle_log_partition(p, (0, n))))
            report.except_best = max(report.except_best, _deviation(
                log_partition_except_best(sc, (0, n), best), oracle_log_partition_except_best(p, (0, n))))
            if nested_decode([sc], n) != oracle_nested_decode([sc], n):
                report.nested_mismatches += 1
            if case % gradient_every == 0:
                report.gradient_cases += 1
                gn = int(rng.integers(1, 7))
                types = ("X", "Y")
                lattices = [LatticeScores(k, rng.uniform(-5, 5, size=(len(TAGS), gn))) for k in types]
                gold = levelize(random_nested_mentions(gn, rng, types), gn, types)
                fast = sentence_loss_grad(lattices, gold)
                slow = oracle_gradient(lattices, gold)
                report.gradient = max(report.gradient, max(float(np.max(np.abs(fast[k] - slow[k]))) for k in types))
        except Exception as exc:  # a broken build must be reported, not crash the check
            report.errors.append(f"case {case}: {type(exc).__name__}: {exc}")
    return report
