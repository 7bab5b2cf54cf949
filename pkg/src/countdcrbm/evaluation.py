"""Confusion counts, score metrics, the majority baseline and score reports.

The positive class is always 1 (a cache miss). Any metric whose denominator
is zero is reported as 0, so a predictor that never fires gets F1 = MCC = 0.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass

import numpy as np


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp, self.tn + other.tn, self.fn + other.fn)


@dataclass(frozen=True)
class ScoreSet:
    accuracy: float
    precision: float
    recall: float
    f1: float
    mcc: float

    def as_dict(self) -> dict[str, float]:
        return asdict(self)


def confusion(predictions, truth) -> ConfusionCounts:
    pred = np.asarray(predictions).astype(bool)
    true = np.asarray(truth).astype(bool)
    if pred.shape != true.shape:
        raise ValueError(f"length mismatch: {pred.shape} predictions vs {true.shape} labels")
    if pred.size == 0:
        raise ValueError("no predictions to score")
    return ConfusionCounts(
        tp=int(np.sum(pred & true)),
        fp=int(np.sum(pred & ~true)),
        tn=int(np.sum(~pred & ~true)),
        fn=int(np.sum(~pred & true)),
    )


def _ratio(num: float, den: float) -> float:
    return num / den if den else 0.0


def score(counts: ConfusionCounts) -> ScoreSet:
    tp, fp, tn, fn = counts.tp, counts.fp, counts.tn, counts.fn
    precision = _ratio(tp, tp + fp)
    recall = _ratio(tp, tp + fn)
    f1 = _ratio(2 * precision * recall, precision + recall)
    # python ints: the product cannot overflow
    den = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)
    mcc = (tp * tn - fp * fn) / math.sqrt(den) if den else 0.0
    return ScoreSet(
        accuracy=_ratio(tp + tn, counts.total),
        precision=precision,
        recall=recall,
        f1=f1,
        mcc=max(-1.0, min(1.0, mcc)),
    )


def score_predictions(predictions, truth) -> ScoreSet:
    return score(confusion(predictions, truth))


def majority_baseline(train_labels, test_labels):
    """Predict the most frequent training label everywhere; ties go to 0."""
    train = np.asarray(train_labels).astype(bool)
    test = np.asarray(test_labels)
    if train.size == 0 or test.size == 0:
        raise ValueError("baseline needs nonempty train and test labels")
    majority = int(train.sum() * 2 > train.size)
    predictions = np.full(test.shape, majority, dtype=np.int8)
    return predictions, score_predictions(predictions, test)


REPORT_COLUMNS = ("cache", "model", "mcc", "f1", "accuracy")


def report_table(rows):
    """Render ``(cache, model, ScoreSet)`` rows as a text table and as CSV.

    The table rounds to two decimals; the CSV keeps full precision.
    """
    rows = list(rows)
    if not rows:
        raise ValueError("empty report")
    cells = [("Cache", "Model", "MCC", "F1", "Accuracy")]
    for cache, model, s in rows:
        cells.append((cache, model, f"{s.mcc:.2f}", f"{s.f1:.2f}", f"{s.accuracy:.2f}"))
    widths = [max(len(row[i]) for row in cells) for i in range(5)]
    rule = "+" + "+".join("-" * (w + 2) for w in widths) + "+"
    lines = [rule]
    for k, row in enumerate(cells):
        lines.append("| " + " | ".join(c.ljust(w) for c, w in zip(row, widths)) + " |")
        if k == 0:
            lines.append(rule)
    lines.append(rule)

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(REPORT_COLUMNS)
    for cache, model, s in rows:
        writer.writerow([cache, model, repr(s.mcc), repr(s.f1), repr(s.accuracy)])
    return "\n".join(lines), buf.getvalue()
