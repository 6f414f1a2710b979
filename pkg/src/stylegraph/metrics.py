"""Multi-label evaluation: micro/macro F1, one-error, hamming loss, per-label tables.

Counts are exact integers and ratios are formed as :class:`fractions.Fraction`
before the final conversion, so results do not depend on summation order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np


@dataclass(frozen=True)
class EvalInstance:
    gold: frozenset[int]
    predicted: frozenset[int]
    scores: tuple[float, ...] = ()

    @classmethod
    def of(cls, gold: Iterable[int], predicted: Iterable[int], scores: Sequence[float] = ()) -> "EvalInstance":
        return cls(frozenset(int(g) for g in gold), frozenset(int(p) for p in predicted), tuple(float(s) for s in scores))


def _f1(tp: int, fp: int, fn: int) -> Fraction:
    denom = 2 * tp + fp + fn
    return Fraction(0) if tp == 0 else Fraction(2 * tp, denom)


def label_counts(instances: Sequence[EvalInstance], m: int) -> np.ndarray:
    """(m, 3) integer table of TP, FP, FN per label."""
    counts = np.zeros((m, 3), dtype=np.int64)
    for inst in instances:
        for j in inst.predicted & inst.gold:
            counts[j, 0] += 1
        for j in inst.predicted - inst.gold:
            counts[j, 1] += 1
        for j in inst.gold - inst.predicted:
            counts[j, 2] += 1
    return counts


def micro_f1(instances: Sequence[EvalInstance]) -> float:
    tp = sum(len(i.predicted & i.gold) for i in instances)
    fp = sum(len(i.predicted - i.gold) for i in instances)
    fn = sum(len(i.gold - i.predicted) for i in instances)
    return float(_f1(tp, fp, fn))


def per_label_f1(instances: Sequence[EvalInstance], m: int) -> list[Fraction]:
    return [_f1(*map(int, row)) for row in label_counts(instances, m)]


def macro_f1(instances: Sequence[EvalInstance], m: int) -> float:
    """Unweighted mean over all ``m`` labels; a label with no TP scores 0."""
    return float(sum(per_label_f1(instances, m), Fraction(0)) / m)


def top_label(scores: Sequence[float]) -> int:
    # argmax picks the first maximum, i.e. the lowest index on ties
    return int(np.argmax(np.asarray(scores)))


def one_error(instances: Sequence[EvalInstance]) -> float:
    if any(not i.scores for i in instances):
        raise ValueError("one-error needs a score vector on every instance")
    misses = sum(top_label(i.scores) not in i.gold for i in instances)
    return float(Fraction(misses, len(instances)))


def hamming_loss(instances: Sequence[EvalInstance], m: int) -> float:
    if m < 1:
        raise ValueError("label space must be non-empty")
    wrong = sum(len(i.gold ^ i.predicted) for i in instances)
    return float(Fraction(wrong, len(instances) * m))


@dataclass
class LabelRow:
    label: str
    support: float  # share of training samples carrying the label
    f1: float
    flag: str = ""  # "top" / "bottom" highlight, "*" for a label absent from test gold and never predicted


@dataclass
class MetricsReport:
    micro_f1: float
    macro_f1: float
    one_error: float
    hamming_loss: float
    per_label: list[LabelRow] = field(default_factory=list)

    def headline(self) -> dict[str, float]:
        return {
            "one_error": round(self.one_error, 3),
            "hamming_loss": round(self.hamming_loss, 3),
            "macro_f1": round(self.macro_f1, 3),
            "micro_f1": round(self.micro_f1, 3),
        }

    def to_json(self) -> dict:
        out = self.headline()
        out["per_label"] = [
            {"label": r.label, "support": round(r.support, 3), "f1": round(r.f1, 3), "flag": r.flag} for r in self.per_label
        ]
        return out

    def format_table(self) -> str:
        h = self.headline()
        lines = [
            f"{'OE(-)':>8} {'HL(-)':>8} {'MacroF1(+)':>11} {'MicroF1(+)':>11}",
            f"{h['one_error']:>8.3f} {h['hamming_loss']:>8.3f} {h['macro_f1']:>11.3f} {h['micro_f1']:>11.3f}",
        ]
        if self.per_label:
            lines += ["", f"{'label':<24} {'% train':>8} {'F1':>7}"]
            for r in self.per_label:
                lines.append(f"{r.label:<24} {100 * round(r.support, 3):>8.1f} {round(r.f1, 3):>7.3f} {r.flag}".rstrip())
            if any(r.flag.endswith("*") for r in self.per_label):
                lines.append("* absent from test gold and never predicted; F1 reported as 0")
        return "\n".join(lines)


def stratified_report(
    instances: Sequence[EvalInstance],
    train_frequency: Sequence[float],
    names: Sequence[str],
    highlight: int = 5,
) -> list[LabelRow]:
    """Per-label F1 sorted by training support, most frequent first."""
    m = len(names)
    f1s = per_label_f1(instances, m)
    gold_seen = set().union(*(i.gold for i in instances)) if instances else set()
    pred_seen = set().union(*(i.predicted for i in instances)) if instances else set()
    order = sorted(range(m), key=lambda j: (-train_frequency[j], j))
    rows = []
    for rank, j in enumerate(order):
        flag = ""
        if rank < highlight:
            flag = "top"
        elif rank >= m - highlight:
            flag = "bottom"
        if j not in gold_seen and j not in pred_seen:
            flag += "*"
        rows.append(LabelRow(names[j], float(train_frequency[j]), float(f1s[j]), flag))
    return rows


def evaluate(
    instances: Sequence[EvalInstance],
    names: Sequence[str],
    train_frequency: Sequence[float] | None = None,
) -> MetricsReport:
    if not instances:
        raise ValueError("nothing to evaluate")
    m = len(names)
    rows = stratified_report(instances, train_frequency, names) if train_frequency is not None else []
    return MetricsReport(
        micro_f1=micro_f1(instances),
        macro_f1=macro_f1(instances, m),
        one_error=one_error(instances),
        hamming_loss=hamming_loss(instances, m),
        per_label=rows,
    )


def report_json(report: MetricsReport) -> str:
    return json.dumps(report.to_json(), indent=2)
