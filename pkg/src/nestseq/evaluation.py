"""Exact-match span scoring with per-level recall and precision."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Sequence

from .tagging import Mention, assign_levels


class AlignmentError(ValueError):
    pass


def _ratio(num: int, den: int) -> float:
    return num / den if den else 0.0


def f1_score(precision: float, recall: float) -> float:
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


@dataclass
class LevelCell:
    level: int
    correct: int
    total: int
    value: float


@dataclass
class EvalReport:
    true_positives: int
    gold_count: int
    pred_count: int
    precision: float
    recall: float
    f1: float
    level_recall: List[LevelCell] = field(default_factory=list)
    level_precision: List[LevelCell] = field(default_factory=list)

    def to_dict(self) -> Dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def format_table(self) -> str:
        lines = [
            f"precision  {100 * self.precision:6.2f}  ({self.true_positives}/{self.pred_count})",
            f"recall     {100 * self.recall:6.2f}  ({self.true_positives}/{self.gold_count})",
            f"f1         {100 * self.f1:6.2f}",
            "",
            f"{'level':>5} | {'recall':>7} {'num':>6} | {'precision':>9} {'num':>6}",
        ]
        depth = max(len(self.level_recall), len(self.level_precision))
        for lv in range(depth):
            r = self.level_recall[lv] if lv < len(self.level_recall) else LevelCell(lv + 1, 0, 0, 0.0)
            p = self.level_precision[lv] if lv < len(self.level_precision) else LevelCell(lv + 1, 0, 0, 0.0)
            r_txt = f"{100 * r.value:7.2f}" if r.total else f"{'-':>7}"
            p_txt = f"{100 * p.value:9.2f}" if p.total else f"{'-':>9}"
            lines.append(f"{lv + 1:>5} | {r_txt} {r.total:>6} | {p_txt} {p.total:>6}")
        return "\n".join(lines)


def _tally(reference: Sequence[Mention], other: set, cells: Dict[int, List[int]]) -> None:
    # Crossing predictions are tolerated; each gets the level of its smallest container.
    for m, level in assign_levels(reference, strict=False).items():
        cell = cells.setdefault(level, [0, 0])
        cell[1] += 1
        if m in other:
            cell[0] += 1


def _cells(tallies: Dict[int, List[int]]) -> List[LevelCell]:
    if not tallies:
        return []
    return [
        LevelCell(lv, tallies.get(lv, [0, 0])[0], tallies.get(lv, [0, 0])[1], _ratio(*tallies.get(lv, [0, 0])))
        for lv in range(1, max(tallies) + 1)
    ]


def score(gold, predicted: Sequence[Sequence[Mention]]) -> EvalReport:
    """Micro P/R/F1 over exact ``(start, end, type)`` matches.

    ``gold`` is a sequence of documents (anything with ``.mentions``) or of
    mention lists, aligned with ``predicted``.
    """
    if len(gold) != len(predicted):
        raise AlignmentError(f"{len(gold)} gold documents but {len(predicted)} predictions")
    tp = n_gold = n_pred = 0
    recall_cells: Dict[int, List[int]] = {}
    precision_cells: Dict[int, List[int]] = {}
    for g, p in zip(gold, predicted):
        g_set = set(getattr(g, "mentions", g))
        p_set = set(Mention(*m) for m in p)
        tp += len(g_set & p_set)
        n_gold += len(g_set)
        n_pred += len(p_set)
        _tally(sorted(g_set), p_set, recall_cells)
        _tally(sorted(p_set), g_set, precision_cells)
    precision = _ratio(tp, n_pred)
    recall = _ratio(tp, n_gold)
    return EvalReport(
        true_positives=tp,
        gold_count=n_gold,
        pred_count=n_pred,
        precision=precision,
        recall=recall,
        f1=f1_score(precision, recall),
        level_recall=_cells(recall_cells),
        level_precision=_cells(precision_cells),
    )
