"""Confusion counts and the five evaluation metrics (PPV, NPV, SNS, SPC, ACC)."""

from __future__ import annotations

from dataclasses import dataclass, fields
from fractions import Fraction
from typing import Iterable

import numpy as np

METRIC_NAMES = ("ppv", "npv", "sns", "spc", "acc")


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    tn: int = 0
    fp: int = 0
    fn: int = 0

    def __post_init__(self) -> None:
        for f in fields(self):
            v = getattr(self, f.name)
            if v < 0:
                raise ValueError(f"{f.name} must be non-negative, got {v}")

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return merge(self, other)

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.tp, self.tn, self.fp, self.fn)


def accumulate(counts: ConfusionCounts, prediction: int, label: int) -> ConfusionCounts:
    if prediction not in (0, 1) or label not in (0, 1):
        raise ValueError("prediction and label must be 0 or 1")
    tp, tn, fp, fn = counts.as_tuple()
    if prediction == 1:
        if label == 1:
            tp += 1
        else:
            fp += 1
    elif label == 1:
        fn += 1
    else:
        tn += 1
    return ConfusionCounts(tp, tn, fp, fn)


def merge(a: ConfusionCounts, b: ConfusionCounts) -> ConfusionCounts:
    return ConfusionCounts(a.tp + b.tp, a.tn + b.tn, a.fp + b.fp, a.fn + b.fn)


def count_predictions(predictions: Iterable[int] | np.ndarray, labels: Iterable[int] | np.ndarray) -> ConfusionCounts:
    """Vectorized accumulate over aligned prediction/label arrays."""
    p = np.asarray(predictions, dtype=np.int64)
    y = np.asarray(labels, dtype=np.int64)
    if p.shape != y.shape:
        raise ValueError("predictions and labels differ in length")
    if p.size and (not np.isin(p, (0, 1)).all() or not np.isin(y, (0, 1)).all()):
        raise ValueError("predictions and labels must be 0 or 1")
    tp = int(np.sum((p == 1) & (y == 1)))
    tn = int(np.sum((p == 0) & (y == 0)))
    fp = int(np.sum((p == 1) & (y == 0)))
    fn = int(np.sum((p == 0) & (y == 1)))
    return ConfusionCounts(tp, tn, fp, fn)


@dataclass(frozen=True)
class MetricsReport:
    """Each metric is None when its denominator is zero."""

    ppv: float | None
    npv: float | None
    sns: float | None
    spc: float | None
    acc: float | None

    def as_dict(self) -> dict[str, float | None]:
        return {name: getattr(self, name) for name in METRIC_NAMES}


def _ratio(num: int, den: int, exact: bool):
    if den == 0:
        return None
    return Fraction(num, den) if exact else num / den


def compute_metrics(counts: ConfusionCounts, exact: bool = False) -> MetricsReport:
    """Evaluate the five metrics from integer counts.

    Integer true division is correctly rounded, so each float equals the
    nearest double to the exact rational. ``exact=True`` returns Fractions.
    """
    tp, tn, fp, fn = counts.as_tuple()
    return MetricsReport(
        ppv=_ratio(tp, tp + fp, exact),
        npv=_ratio(tn, tn + fn, exact),
        sns=_ratio(tp, tp + fn, exact),
        spc=_ratio(tn, tn + fp, exact),
        acc=_ratio(tp + tn, tp + tn + fp + fn, exact),
    )
