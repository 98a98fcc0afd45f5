"""Training objective: best-path and second-best-path log-likelihoods.

Level-1 spans contribute the usual CRF log-likelihood of the gold sequence
against every path. Deeper spans contribute the log-likelihood of the gold
sequence against every path except the excluded best one, which is summed
directly in log space with a second accumulator that tracks the paths
ending on the excluded path's tag without being its prefix.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Hashable, List, Optional, Sequence, Tuple

import numpy as np

from .decode import DecodedPath, ExhaustedError, viterbi_best
from .lattice import LatticeScores, ShapeError, path_score
from .tagging import NUM_TAGS, LevelizedGold, check_well_formed, parent_tagging

NEG_INF = float("-inf")

#: Which path deeper-level terms exclude from their normaliser.
EXCLUDE_GOLD_PARENT = "gold_parent"
EXCLUDE_MODEL_BEST = "model_best"

#: Objective variants: full nested objective, or level-1 CRF terms only.
OBJECTIVE_NESTED = "nested"
OBJECTIVE_FLAT = "flat"


def logsumexp(x, axis=None):
    """Max-shifted log-sum-exp; an all ``-inf`` slice gives ``-inf``."""
    x = np.asarray(x, dtype=np.float64)
    m = np.max(x, axis=axis, keepdims=True)
    safe = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(x - safe), axis=axis, keepdims=True)) + safe
    if axis is None:
        return float(out.reshape(()))
    return np.squeeze(out, axis=axis)


def _forward(scores: LatticeScores, span: Tuple[int, int]) -> np.ndarray:
    s, e = span
    p = scores.emissions
    trans = scores.transitions
    alpha = np.empty((e - s, NUM_TAGS))
    alpha[0] = scores.start_transitions + p[:, s]
    for j in range(1, e - s):
        alpha[j] = logsumexp(alpha[j - 1][:, None] + trans, axis=0) + p[:, s + j]
    return alpha


def _backward(scores: LatticeScores, span: Tuple[int, int]) -> np.ndarray:
    # beta[j, c]: log-sum over continuations after position s+j given tag c there.
    s, e = span
    p = scores.emissions
    trans = scores.transitions
    beta = np.empty((e - s, NUM_TAGS))
    beta[-1] = scores.end_transitions
    for j in range(e - s - 2, -1, -1):
        beta[j] = logsumexp(trans + (p[:, s + j + 1] + beta[j + 1])[None, :], axis=1)
    return beta


def log_partition(scores: LatticeScores, span: Tuple[int, int]) -> float:
    span = scores.check_span(span)
    alpha = _forward(scores, span)
    return logsumexp(alpha[-1] + scores.end_transitions)


def _forward_except(scores, span, best, alpha):
    """Per-position log-sum of prefixes ending on ``best[j]`` that differ from best's prefix."""
    s, e = span
    p = scores.emissions
    trans = scores.transitions
    excl = np.empty(e - s)
    excl[0] = NEG_INF
    for j in range(1, e - s):
        cur, prev = best[j], best[j - 1]
        into = alpha[j - 1] + trans[:, cur]
        into[prev] = excl[j - 1] + trans[prev, cur]
        excl[j] = logsumexp(into) + p[cur, s + j]
    return excl


def _backward_except(scores, span, best, beta):
    """Per-position log-sum of continuations from ``best[j]`` that differ from best's suffix."""
    s, e = span
    p = scores.emissions
    trans = scores.transitions
    excl = np.empty(e - s)
    excl[-1] = NEG_INF
    for j in range(e - s - 2, -1, -1):
        cur, nxt = best[j], best[j + 1]
        out = trans[cur] + p[:, s + j + 1] + beta[j + 1]
        out[nxt] = trans[cur, nxt] + p[nxt, s + j + 1] + excl[j + 1]
        excl[j] = logsumexp(out)
    return excl


def _final_except(scores, best, alpha, excl) -> float:
    last = best[-1]
    final = alpha[-1] + scores.end_transitions
    final[last] = excl[-1] + scores.end_transitions[last]
    return logsumexp(final)


def log_partition_except_best(scores: LatticeScores, span: Tuple[int, int], best) -> float:
    """Log-sum-exp of all path scores in ``span`` except the path ``best``.

    ``best`` is a :class:`DecodedPath` or a plain tag sequence.
    """
    span = scores.check_span(span)
    tags = tuple(best.tags if isinstance(best, DecodedPath) else best)
    if len(tags) != span[1] - span[0]:
        raise ShapeError("excluded path does not match the span width")
    alpha = _forward(scores, span)
    value = _final_except(scores, tags, alpha, _forward_except(scores, span, tags, alpha))
    if value == NEG_INF:
        raise ExhaustedError(f"span {span} has no legal path besides the excluded one")
    return value


def _gold_score_grad(scores, span, tags, grad):
    s = span[0]
    for j, t in enumerate(tags):
        grad[t, s + j] -= 1.0


def _term_all(scores, span, tags, grad):
    alpha = _forward(scores, span)
    log_z = logsumexp(alpha[-1] + scores.end_transitions)
    value = path_score(scores, span, tags) - log_z
    if grad is not None:
        beta = _backward(scores, span)
        grad[:, span[0]:span[1]] += np.exp(alpha + beta - log_z).T
        _gold_score_grad(scores, span, tags, grad)
    return value


def _term_except(scores, span, tags, excluded, grad):
    alpha = _forward(scores, span)
    fwd_x = _forward_except(scores, span, excluded, alpha)
    log_z = _final_except(scores, excluded, alpha, fwd_x)
    if log_z == NEG_INF:
        raise ExhaustedError(f"span {span} has no legal path besides the excluded one")
    value = path_score(scores, span, tags) - log_z
    if grad is not None:
        s, e = span
        beta = _backward(scores, span)
        bwd_x = _backward_except(scores, span, excluded, beta)
        marg = alpha + beta
        prefix = 0.0
        prev = None
        for j, c in enumerate(excluded):
            prefix += scores.emissions[c, s + j] + (
                scores.start_transitions[c] if prev is None else scores.transitions[prev, c]
            )
            prev = c
            # Through (j, c): non-best prefix with any suffix, or best prefix with non-best suffix.
            marg[j, c] = np.logaddexp(fwd_x[j] + beta[j, c], prefix + bwd_x[j])
        grad[:, s:e] += np.exp(marg - log_z).T
        _gold_score_grad(scores, span, tags, grad)
    return value


@dataclass(frozen=True)
class LossTerm:
    entity_type: Hashable
    level: int
    span: Tuple[int, int]
    value: float


@dataclass
class LossBreakdown:
    total: float
    per_type: Dict[Hashable, float] = field(default_factory=dict)
    per_level_terms: List[LossTerm] = field(default_factory=list)


def loss_and_grad(
    all_scores: Sequence[LatticeScores],
    gold: LevelizedGold,
    exclude: str = EXCLUDE_GOLD_PARENT,
    objective: str = OBJECTIVE_NESTED,
    compute_grad: bool = True,
) -> Tuple[LossBreakdown, Optional[Dict[Hashable, np.ndarray]]]:
    """Negated sentence log-likelihood and its gradient w.r.t. the emissions.

    With ``exclude="model_best"`` each deeper term excludes the current
    best path of its span instead of the gold parent's tagging; if that path
    coincides with the gold target the parent tagging is excluded instead,
    so the target always stays inside the normaliser.
    """
    if exclude not in (EXCLUDE_GOLD_PARENT, EXCLUDE_MODEL_BEST):
        raise ValueError(f"unknown exclusion mode {exclude!r}")
    if objective not in (OBJECTIVE_NESTED, OBJECTIVE_FLAT):
        raise ValueError(f"unknown objective {objective!r}")
    breakdown = LossBreakdown(total=0.0)
    grads = {} if compute_grad else None
    for scores in all_scores:
        k = scores.entity_type
        if scores.n != gold.n:
            raise ShapeError(f"lattice length {scores.n} does not match gold length {gold.n}")
        grad = np.zeros((NUM_TAGS, scores.n)) if compute_grad else None
        loglik = 0.0
        for level, rec in gold.records(k):
            if level > 1 and objective == OBJECTIVE_FLAT:
                break
            check_well_formed(rec.tags)
            if level == 1:
                value = _term_all(scores, rec.span, rec.tags, grad)
            else:
                excluded = parent_tagging(rec.span[1] - rec.span[0])
                if exclude == EXCLUDE_MODEL_BEST:
                    current = viterbi_best(scores, rec.span).tags
                    if current != tuple(rec.tags):
                        excluded = current
                value = _term_except(scores, rec.span, rec.tags, excluded, grad)
            breakdown.per_level_terms.append(LossTerm(k, level, rec.span, value))
            loglik += value
        breakdown.per_type[k] = loglik
        if compute_grad:
            grads[k] = grad
    breakdown.total = -sum(breakdown.per_type.values())
    return breakdown, grads


def sentence_loss(all_scores: Sequence[LatticeScores], gold: LevelizedGold, **kwargs) -> LossBreakdown:
    return loss_and_grad(all_scores, gold, compute_grad=False, **kwargs)[0]


def sentence_loss_grad(all_scores: Sequence[LatticeScores], gold: LevelizedGold, **kwargs) -> Dict[Hashable, np.ndarray]:
    """d(loss)/dP for each type, each of shape ``5 x n``."""
    return loss_and_grad(all_scores, gold, compute_grad=True, **kwargs)[1]
