"""Max Precision classifier.

Each BIC is scored by its precision on the training data, t/(t+f), where t
and f count MALICIOUS and BENIGN samples triggering it. A sample is MALICIOUS
when its best-scoring triggered BIC reaches the threshold. The optional
corrective pass replays the training set once and moves a unit of count
between t and f for every misclassified sample.

Threshold comparisons are exact: the threshold is kept as a Fraction and
``S_m >= T`` is evaluated as ``t * den >= num * (t + f)`` on integers.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

from .samples import LabeledSample, SparseBatch

DEFAULT_THRESHOLD = Fraction(99, 100)
DEFAULT_GRID: tuple[Fraction, ...] = tuple(Fraction(k, 1000) for k in range(500, 1000))

_INT64_SAFE = 2**62


def as_threshold(value) -> Fraction:
    """Convert a float, string ("0.99" or "99/100") or Fraction to a threshold in (0, 1)."""
    if isinstance(value, Fraction):
        t = value
    elif isinstance(value, float):
        # the decimal the user typed, not the binary double
        t = Fraction(repr(value))
    else:
        t = Fraction(value)
    if not 0 < t < 1:
        raise ValueError(f"threshold must lie strictly between 0 and 1, got {value!r}")
    return t


def default_grid() -> list[Fraction]:
    grid = list(DEFAULT_GRID)
    if DEFAULT_THRESHOLD not in grid:
        grid.append(DEFAULT_THRESHOLD)
    return sorted(grid)


class MpCounters:
    """Per-BIC true-positive (t) and false-positive (f) trigger counts."""

    def __init__(self, m_count: int, t=None, f=None):
        self.m_count = m_count
        self.t = np.zeros(m_count, dtype=np.int64) if t is None else np.array(t, dtype=np.int64)
        self.f = np.zeros(m_count, dtype=np.int64) if f is None else np.array(f, dtype=np.int64)
        if self.t.shape != (m_count,) or self.f.shape != (m_count,):
            raise ValueError("counter shapes do not match m_count")
        if (self.t < 0).any() or (self.f < 0).any():
            raise ValueError("counters must be non-negative")

    def copy(self) -> "MpCounters":
        return MpCounters(self.m_count, self.t, self.f)

    def update(self, sample: LabeledSample) -> "MpCounters":
        if sample.label is None:
            raise ValueError(f"sample {sample.id!r} is unlabeled")
        if sample.bics:
            target = self.t if sample.label == 1 else self.f
            target[list(sample.bics)] += 1
        return self

    def update_batch(self, batch: SparseBatch) -> "MpCounters":
        if np.any(batch.labels < 0):
            raise ValueError("unlabeled sample in training data")
        malicious = (batch.labels == 1)[batch.row_ids()]
        self.t += np.bincount(batch.indices[malicious], minlength=self.m_count)
        self.f += np.bincount(batch.indices[~malicious], minlength=self.m_count)
        return self

    def _check(self, other: "MpCounters") -> None:
        if other.m_count != self.m_count:
            raise ValueError(f"m_count mismatch: {self.m_count} vs {other.m_count}")

    def __add__(self, other: "MpCounters") -> "MpCounters":
        self._check(other)
        return MpCounters(self.m_count, self.t + other.t, self.f + other.f)

    def __sub__(self, other: "MpCounters") -> "MpCounters":
        self._check(other)
        return MpCounters(self.m_count, self.t - other.t, self.f - other.f)

    def __eq__(self, other) -> bool:
        if not isinstance(other, MpCounters):
            return NotImplemented
        return self.m_count == other.m_count and np.array_equal(self.t, other.t) and np.array_equal(self.f, other.f)

    def __repr__(self) -> str:
        return f"MpCounters(m_count={self.m_count}, triggers={int(self.t.sum() + self.f.sum())})"

    def exact_score(self, m: int) -> Fraction:
        t, f = int(self.t[m]), int(self.f[m])
        return Fraction(t, t + f) if t + f else Fraction(0)


def accumulate(counters: MpCounters, sample: LabeledSample) -> MpCounters:
    return counters.update(sample)


def count(samples: Iterable[LabeledSample], m_count: int) -> MpCounters:
    counters = MpCounters(m_count)
    for s in samples:
        counters.update(s)
    return counters


def compute_scores(counters: MpCounters) -> np.ndarray:
    """Precision t/(t+f) per BIC; BICs never seen in training score 0."""
    den = counters.t + counters.f
    scores = np.zeros(counters.m_count, dtype=np.float64)
    seen = den > 0
    # int/int true division rounds the exact rational once
    scores[seen] = counters.t[seen] / den[seen]
    return scores


def select_bic(scores: np.ndarray, sample: LabeledSample) -> int | None:
    """Triggered BIC with the highest score; lowest index wins ties."""
    if not sample.bics:
        return None
    bics = sample.bics
    return bics[int(np.argmax(scores[list(bics)]))]


def select_batch(scores: np.ndarray, batch: SparseBatch) -> np.ndarray:
    """Vectorized select_bic; -1 marks samples without triggered BICs."""
    out = np.full(len(batch), -1, dtype=np.int64)
    nonempty = batch.nnz > 0
    if not nonempty.any():
        return out
    starts = batch.indptr[:-1][nonempty]
    values = scores[batch.indices]
    seg_max = np.maximum.reduceat(values, starts)
    row_max = np.full(len(batch), -np.inf)
    row_max[nonempty] = seg_max
    is_max = values == row_max[batch.row_ids()]
    pos = np.where(is_max, np.arange(values.size), values.size)
    first = np.minimum.reduceat(pos, starts)
    out[nonempty] = batch.indices[first]
    return out


def meets_threshold(t, f, threshold: Fraction) -> np.ndarray:
    """Exact test of t/(t+f) >= threshold; zero-trigger BICs never meet it."""
    t = np.asarray(t, dtype=np.int64)
    f = np.asarray(f, dtype=np.int64)
    num, den = threshold.numerator, threshold.denominator
    total = t + f
    bound = int(total.max(initial=0)) * max(num, den)
    if bound < _INT64_SAFE:
        ok = t * den >= num * total
    else:
        ok = np.array([int(a) * den >= num * int(b) for a, b in zip(t, total)], dtype=bool)
    return ok & (total > 0)


@dataclass(frozen=True, eq=False)
class MpModel:
    counters: MpCounters
    scores: np.ndarray
    threshold: Fraction = DEFAULT_THRESHOLD
    corrected: bool = False

    @classmethod
    def from_counters(cls, counters: MpCounters, threshold=DEFAULT_THRESHOLD, corrected: bool = False) -> "MpModel":
        scores = compute_scores(counters)
        scores.setflags(write=False)
        return cls(counters.copy(), scores, as_threshold(threshold), corrected)

    @property
    def m_count(self) -> int:
        return self.counters.m_count

    def select(self, sample: LabeledSample) -> int | None:
        return select_bic(self.scores, sample)

    def classify(self, sample: LabeledSample) -> int:
        m = self.select(sample)
        if m is None:
            return 0
        return int(meets_threshold(self.counters.t[m], self.counters.f[m], self.threshold))

    def score(self, sample: LabeledSample) -> float:
        m = self.select(sample)
        return 0.0 if m is None else float(self.scores[m])

    def classify_batch(self, batch: SparseBatch) -> np.ndarray:
        return _classify_selected(self.counters, select_batch(self.scores, batch), self.threshold)

    def score_batch(self, batch: SparseBatch) -> np.ndarray:
        sel = select_batch(self.scores, batch)
        return np.where(sel >= 0, self.scores[np.maximum(sel, 0)], 0.0)


def _classify_selected(counters: MpCounters, sel: np.ndarray, threshold: Fraction) -> np.ndarray:
    out = np.zeros(len(sel), dtype=np.int8)
    hit = sel >= 0
    m = sel[hit]
    out[hit] = meets_threshold(counters.t[m], counters.f[m], threshold)
    return out


def classify(model: MpModel, sample: LabeledSample) -> int:
    return model.classify(sample)


def _as_batch(samples, m_count: int) -> SparseBatch:
    batch = samples if isinstance(samples, SparseBatch) else SparseBatch.from_samples(samples, m_count)
    if np.any(batch.labels < 0):
        raise ValueError("unlabeled sample in training data")
    return batch


def threshold_errors(pairs: Sequence[tuple[Fraction, int]], grid: Sequence[Fraction]) -> list[int]:
    """Training errors for each grid threshold, given (max score, label) per sample.

    Samples with no triggered BIC should be passed with score 0.
    One sort of the distinct scores, then a binary search per grid value.
    """
    pos: dict[Fraction, int] = {}
    neg: dict[Fraction, int] = {}
    for score, label in pairs:
        bucket = pos if label == 1 else neg
        bucket[score] = bucket.get(score, 0) + 1
    keys = sorted(set(pos) | set(neg))
    # pos_below[i]: malicious samples with score < keys[i] (predicted BENIGN)
    pos_below = [0]
    neg_below = [0]
    for k in keys:
        pos_below.append(pos_below[-1] + pos.get(k, 0))
        neg_below.append(neg_below[-1] + neg.get(k, 0))
    neg_total = neg_below[-1]
    errors = []
    for t in grid:
        i = bisect.bisect_left(keys, t)
        # score 0 (no evidence) is below any T in (0, 1)
        errors.append(pos_below[i] + (neg_total - neg_below[i]))
    return errors


def _pick_threshold(grid: Sequence[Fraction], errors: Sequence[int]) -> Fraction:
    # fewest errors; ties go to the largest threshold
    return min(zip(errors, grid), key=lambda p: (p[0], -p[1]))[1]


def fit_threshold(
    counters: MpCounters,
    samples: Sequence[LabeledSample] | SparseBatch,
    grid: Sequence | None = None,
) -> Fraction:
    """Grid threshold minimizing training misclassifications under ``counters``."""
    grid = default_grid() if grid is None else [as_threshold(g) for g in grid]
    if not grid:
        raise ValueError("threshold grid is empty")
    batch = _as_batch(samples, counters.m_count)
    if len(batch) == 0:
        raise ValueError("cannot fit a threshold without training samples")
    sel = select_batch(compute_scores(counters), batch)
    # group samples by selected BIC; the exact score is shared within a group
    pairs: list[tuple[Fraction, int]] = []
    keys, inverse = np.unique(sel, return_inverse=True)
    pos = np.bincount(inverse, weights=(batch.labels == 1), minlength=len(keys)).astype(np.int64)
    neg = np.bincount(inverse, weights=(batch.labels == 0), minlength=len(keys)).astype(np.int64)
    for m, n_pos, n_neg in zip(keys.tolist(), pos.tolist(), neg.tolist()):
        score = Fraction(0) if m < 0 else counters.exact_score(m)
        pairs.extend([(score, 1)] * n_pos)
        pairs.extend([(score, 0)] * n_neg)
    return _pick_threshold(grid, threshold_errors(pairs, grid))


def corrective_pass(
    counters: MpCounters,
    threshold,
    samples: Sequence[LabeledSample] | SparseBatch,
    scores: np.ndarray | None = None,
    incremental: bool = False,
) -> MpCounters:
    """One ordered pass over the training data, penalizing misclassifications.

    A MALICIOUS prediction on a BENIGN sample moves one count of the selected
    BIC from t to f (if t > 0); a BENIGN prediction on a MALICIOUS sample
    moves one from f to t (if f > 0). By default selection and classification
    use the scores as they were before the pass; ``incremental=True``
    rescores the touched BIC after every penalty instead.

    Returns new counters; the input is not modified.
    """
    threshold = as_threshold(threshold)
    batch = _as_batch(samples, counters.m_count)
    out = counters.copy()
    if incremental:
        return _corrective_incremental(out, threshold, batch)

    snapshot = compute_scores(counters) if scores is None else np.asarray(scores)
    sel = select_batch(snapshot, batch)
    pred = _classify_selected(counters, sel, threshold)
    labels = batch.labels
    wrong = np.flatnonzero((sel >= 0) & (pred != labels))
    t, f = out.t, out.f
    for n in wrong.tolist():
        m = sel[n]
        if pred[n] == 1:
            if t[m] > 0:
                t[m] -= 1
                f[m] += 1
        elif f[m] > 0:
            t[m] += 1
            f[m] -= 1
    return out


def _corrective_incremental(out: MpCounters, threshold: Fraction, batch: SparseBatch) -> MpCounters:
    scores = compute_scores(out)
    t, f = out.t, out.f
    for n in range(len(batch)):
        row = batch.row(n)
        if row.size == 0:
            continue
        m = int(row[np.argmax(scores[row])])
        c = int(meets_threshold(t[m], f[m], threshold))
        y = int(batch.labels[n])
        if c == 1 and y == 0 and t[m] > 0:
            t[m] -= 1
            f[m] += 1
        elif c == 0 and y == 1 and f[m] > 0:
            t[m] += 1
            f[m] -= 1
        else:
            continue
        scores[m] = t[m] / (t[m] + f[m])
    return out


def fit(
    samples: Sequence[LabeledSample] | SparseBatch,
    m_count: int,
    threshold="0.99",
    corrected: bool = False,
    grid: Sequence | None = None,
    incremental: bool = False,
    counters: MpCounters | None = None,
) -> MpModel:
    """Fit MP1 (``corrected=False``) or MP2 (``corrected=True``).

    ``threshold="search"`` picks T on ``grid`` from the predictive scores.
    Pre-computed ``counters`` for the same samples may be passed to skip
    the counting pass.
    """
    batch = _as_batch(samples, m_count)
    if len(batch) == 0:
        raise ValueError("cannot fit Max Precision without training samples")
    if counters is None:
        counters = MpCounters(m_count).update_batch(batch)
    if isinstance(threshold, str) and threshold == "search":
        t = fit_threshold(counters, batch, grid)
    else:
        t = as_threshold(threshold)
    if corrected:
        counters = corrective_pass(counters, t, batch, incremental=incremental)
    return MpModel.from_counters(counters, t, corrected)
