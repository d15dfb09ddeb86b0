"""Evaluation metrics for the three stance protocols.

Per-class F1 comes from a 3x3 confusion table (gold rows, predicted
columns). The headline aggregate depends on the protocol:

- favor_against: mean F1 of FAVOR and AGAINST (SEM16 / WT-WT / COVID-19
  zero-shot reporting),
- all_class: mean F1 of all three classes (VAST reporting),
- cross_target: mean of micro- and macro-F1 computed over the instances
  whose gold label is FAVOR or AGAINST.

A class with no gold and no predicted instances scores F1 = 0 by
convention, so no division by zero can occur.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping, Optional, Sequence

import numpy as np

from .corpus import SplitProtocol, Stance

CLASS_ORDER = (Stance.FAVOR, Stance.AGAINST, Stance.NEUTRAL)
_CLASS_INDEX = {stance: i for i, stance in enumerate(CLASS_ORDER)}


@dataclass(frozen=True)
class ConfusionTable:
    """3x3 count matrix indexed (gold, predicted) in CLASS_ORDER."""

    counts: np.ndarray

    def __post_init__(self) -> None:
        counts = np.asarray(self.counts, dtype=np.int64)
        if counts.shape != (3, 3):
            raise ValueError(f"confusion table must be 3x3, got {counts.shape}")
        if (counts < 0).any():
            raise ValueError("confusion table entries must be nonnegative")
        object.__setattr__(self, "counts", counts)

    @classmethod
    def from_labels(cls, gold: Sequence[Stance], predicted: Sequence[Stance]) -> "ConfusionTable":
        if len(gold) != len(predicted):
            raise ValueError("gold and predicted label lists differ in length")
        counts = np.zeros((3, 3), dtype=np.int64)
        for g, p in zip(gold, predicted):
            counts[_CLASS_INDEX[Stance(g)], _CLASS_INDEX[Stance(p)]] += 1
        return cls(counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def _f1(tp: float, fp: float, fn: float) -> float:
    if tp == 0:
        return 0.0
    precision = tp / (tp + fp)
    recall = tp / (tp + fn)
    return 2 * precision * recall / (precision + recall)


def f1_per_class(table: ConfusionTable) -> dict:
    """F1 per stance class; absent classes score 0 by convention."""
    counts = table.counts
    result = {}
    for stance, i in _CLASS_INDEX.items():
        tp = float(counts[i, i])
        fp = float(counts[:, i].sum() - counts[i, i])
        fn = float(counts[i, :].sum() - counts[i, i])
        result[stance] = _f1(tp, fp, fn)
    return result


class EvalStyle(str, Enum):
    FAVOR_AGAINST = "favor_against"
    ALL_CLASS = "all_class"
    CROSS_TARGET = "cross_target"


def style_for_protocol(protocol: SplitProtocol) -> EvalStyle:
    """Default reporting style per split protocol (few-shot implies VAST)."""
    protocol = SplitProtocol(protocol)
    if protocol == SplitProtocol.CROSS_TARGET:
        return EvalStyle.CROSS_TARGET
    if protocol == SplitProtocol.FEW_SHOT:
        return EvalStyle.ALL_CLASS
    return EvalStyle.FAVOR_AGAINST


def _cross_target_scores(table: ConfusionTable) -> tuple:
    """Micro/macro F1 over the gold-FAVOR/AGAINST instances only.

    Within that subset, predicting the other binary class is a false
    positive for it; predicting NEUTRAL only costs recall.
    """
    counts = table.counts
    fav, agn = _CLASS_INDEX[Stance.FAVOR], _CLASS_INDEX[Stance.AGAINST]
    per_class = []
    tp_sum = fp_sum = fn_sum = 0.0
    for me, other in ((fav, agn), (agn, fav)):
        tp = float(counts[me, me])
        fp = float(counts[other, me])
        fn = float(counts[me, :].sum() - counts[me, me])
        per_class.append(_f1(tp, fp, fn))
        tp_sum += tp
        fp_sum += fp
        fn_sum += fn
    macro = float(np.mean(per_class))
    denominator = 2 * tp_sum + fp_sum + fn_sum
    micro = 2 * tp_sum / denominator if denominator > 0 else 0.0
    return micro, macro


def _three_class_micro(table: ConfusionTable) -> float:
    # Single-label multiclass micro-F1 over all classes equals accuracy.
    total = table.total
    return float(np.trace(table.counts)) / total if total else 0.0


def headline_metric(table: ConfusionTable, style: EvalStyle,
                    cross_target_micro: str = "binary") -> float:
    """Protocol-specific aggregate, always recomputable from the table."""
    style = EvalStyle(style)
    per_class = f1_per_class(table)
    if style == EvalStyle.FAVOR_AGAINST:
        return (per_class[Stance.FAVOR] + per_class[Stance.AGAINST]) / 2.0
    if style == EvalStyle.ALL_CLASS:
        return float(np.mean([per_class[c] for c in CLASS_ORDER]))
    if style == EvalStyle.CROSS_TARGET:
        micro, macro = _cross_target_scores(table)
        if cross_target_micro == "three_class":
            micro = _three_class_micro(table)
        elif cross_target_micro != "binary":
            raise ValueError(f"unknown cross_target_micro option {cross_target_micro!r}")
        return (micro + macro) / 2.0
    raise ValueError(f"unknown evaluation style {style!r}")


def vast_headline(per_class_f1_values: Sequence[float]) -> float:
    """VAST 'All' aggregate: plain mean of the three per-class F1 values."""
    values = list(per_class_f1_values)
    if len(values) != 3:
        raise ValueError(f"expected 3 per-class values, got {len(values)}")
    return float(np.mean(values))


@dataclass
class MetricReport:
    """Evaluation result: per-class F1, the headline, and provenance."""

    style: EvalStyle
    per_class_f1: Mapping[Stance, float]
    headline: float
    support: Mapping[Stance, int]
    run_seed: int
    table: ConfusionTable
    cross_target_micro: str = "binary"

    def __post_init__(self) -> None:
        recomputed = headline_metric(self.table, self.style, self.cross_target_micro)
        if abs(recomputed - self.headline) > 1e-9:
            raise ValueError(f"headline {self.headline} inconsistent with confusion "
                             f"table (recomputed {recomputed})")

    @classmethod
    def from_table(cls, table: ConfusionTable, style: EvalStyle, run_seed: int = 0,
                   cross_target_micro: str = "binary") -> "MetricReport":
        per_class = f1_per_class(table)
        support = {stance: int(table.counts[_CLASS_INDEX[stance], :].sum())
                   for stance in CLASS_ORDER}
        return cls(style=EvalStyle(style), per_class_f1=per_class,
                   headline=headline_metric(table, style, cross_target_micro),
                   support=support, run_seed=run_seed, table=table,
                   cross_target_micro=cross_target_micro)

    def to_dict(self) -> dict:
        return {
            "style": self.style.value,
            "per_class_f1": {s.value: float(v) for s, v in self.per_class_f1.items()},
            "headline": float(self.headline),
            "support": {s.value: int(v) for s, v in self.support.items()},
            "run_seed": int(self.run_seed),
            "confusion": self.table.counts.tolist(),
            "cross_target_micro": self.cross_target_micro,
        }

    @classmethod
    def from_dict(cls, payload: Mapping) -> "MetricReport":
        table = ConfusionTable(np.array(payload["confusion"], dtype=np.int64))
        return cls(
            style=EvalStyle(payload["style"]),
            per_class_f1={Stance(k): float(v) for k, v in payload["per_class_f1"].items()},
            headline=float(payload["headline"]),
            support={Stance(k): int(v) for k, v in payload["support"].items()},
            run_seed=int(payload["run_seed"]),
            table=table,
            cross_target_micro=payload.get("cross_target_micro", "binary"),
        )
