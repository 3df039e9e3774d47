"""Bernoulli naive Bayes over triggered BICs, with add-one (Laplace) smoothing.

Training only counts, so counters can be updated one sample at a time,
merged across shards, and subtracted when a day leaves a sliding window.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .samples import LabeledSample, SparseBatch


class NbCounters:
    """Per-class trigger counts ``n_km`` and class totals ``N_k``."""

    def __init__(self, m_count: int, n_km: np.ndarray | None = None, class_totals=None):
        self.m_count = m_count
        self.n_km = np.zeros((2, m_count), dtype=np.int64) if n_km is None else np.array(n_km, dtype=np.int64)
        self.class_totals = (
            np.zeros(2, dtype=np.int64) if class_totals is None else np.array(class_totals, dtype=np.int64)
        )
        if self.n_km.shape != (2, m_count) or self.class_totals.shape != (2,):
            raise ValueError("counter shapes do not match m_count")

    @property
    def total(self) -> int:
        return int(self.class_totals.sum())

    def copy(self) -> "NbCounters":
        return NbCounters(self.m_count, self.n_km, self.class_totals)

    def update(self, sample: LabeledSample) -> "NbCounters":
        if sample.label is None:
            raise ValueError(f"sample {sample.id!r} is unlabeled")
        self.class_totals[sample.label] += 1
        if sample.bics:
            self.n_km[sample.label, list(sample.bics)] += 1
        return self

    def update_batch(self, batch: SparseBatch) -> "NbCounters":
        if np.any(batch.labels < 0):
            raise ValueError("unlabeled sample in training data")
        labels = batch.labels.astype(np.int64)
        self.class_totals += np.bincount(labels, minlength=2)
        per_entry = labels[batch.row_ids()]
        for k in (0, 1):
            self.n_km[k] += np.bincount(batch.indices[per_entry == k], minlength=self.m_count)
        return self

    def _check(self, other: "NbCounters") -> None:
        if other.m_count != self.m_count:
            raise ValueError(f"m_count mismatch: {self.m_count} vs {other.m_count}")

    def __add__(self, other: "NbCounters") -> "NbCounters":
        self._check(other)
        return NbCounters(self.m_count, self.n_km + other.n_km, self.class_totals + other.class_totals)

    def __sub__(self, other: "NbCounters") -> "NbCounters":
        self._check(other)
        out = NbCounters(self.m_count, self.n_km - other.n_km, self.class_totals - other.class_totals)
        if (out.n_km < 0).any() or (out.class_totals < 0).any():
            raise ValueError("subtraction would make counters negative")
        return out

    def __eq__(self, other) -> bool:
        if not isinstance(other, NbCounters):
            return NotImplemented
        return (
            self.m_count == other.m_count
            and np.array_equal(self.n_km, other.n_km)
            and np.array_equal(self.class_totals, other.class_totals)
        )

    def __repr__(self) -> str:
        return f"NbCounters(m_count={self.m_count}, class_totals={self.class_totals.tolist()})"


def update_counts(counters: NbCounters, sample: LabeledSample) -> NbCounters:
    return counters.update(sample)


def merge_counters(a: NbCounters, b: NbCounters) -> NbCounters:
    return a + b


def count(samples: Iterable[LabeledSample], m_count: int) -> NbCounters:
    counters = NbCounters(m_count)
    for s in samples:
        counters.update(s)
    return counters


@dataclass(frozen=True, eq=False)
class NbModel:
    counters: NbCounters
    log_p: np.ndarray  # (2, M): log P(x_m = 1 | k)
    log_q: np.ndarray  # (2, M): log P(x_m = 0 | k)
    log_prior: np.ndarray  # (2,), -inf for an empty class
    bias: np.ndarray  # (2,): log_prior + sum_m log_q
    delta: np.ndarray  # (2, M): log_p - log_q, the cost of a triggered BIC

    @property
    def m_count(self) -> int:
        return self.counters.m_count

    def scores(self, sample: LabeledSample) -> tuple[float, float]:
        b = list(sample.bics)
        zeros = np.zeros(len(b), dtype=np.int64)
        # same summation routine as scores_batch, so both paths agree bit-for-bit
        s = [self.bias[k] + np.bincount(zeros, weights=self.delta[k, b], minlength=1)[0] for k in (0, 1)]
        return float(s[0]), float(s[1])

    def score(self, sample: LabeledSample, k: int | None = None) -> float:
        """Class score s_k, or s_1 - s_0 when ``k`` is omitted."""
        s0, s1 = self.scores(sample)
        if k is None:
            return s1 - s0
        return (s0, s1)[k]

    def classify(self, sample: LabeledSample) -> int:
        s0, s1 = self.scores(sample)
        if s0 == -np.inf and s1 == -np.inf:
            raise ValueError("both class scores are -inf")
        # ties go to MALICIOUS
        return int(s1 >= s0)

    def scores_batch(self, batch: SparseBatch) -> np.ndarray:
        delta = self.delta
        rows = batch.row_ids()
        out = np.empty((2, len(batch)))
        for k in (0, 1):
            out[k] = self.bias[k] + np.bincount(rows, weights=delta[k, batch.indices], minlength=len(batch))
        return out

    def classify_batch(self, batch: SparseBatch) -> np.ndarray:
        s = self.scores_batch(batch)
        return (s[1] >= s[0]).astype(np.int8)


def finalize(counters: NbCounters) -> NbModel:
    """Turn counts into smoothed log-probability tables."""
    n = counters.total
    if n < 1:
        raise ValueError("cannot finalize naive Bayes without training samples")
    n_km = counters.n_km.astype(np.float64)
    n_k = counters.class_totals.astype(np.float64)[:, None]
    # (n+1)/(N+2) and its complement (N-n+1)/(N+2), each from exact integers
    log_den = np.log(n_k + 2.0)
    log_p = np.log(n_km + 1.0) - log_den
    log_q = np.log(n_k - n_km + 1.0) - log_den
    with np.errstate(divide="ignore"):
        log_prior = np.log(counters.class_totals.astype(np.float64)) - np.log(float(n))
    bias = log_prior + log_q.sum(axis=1)
    delta = log_p - log_q
    for arr in (log_p, log_q, log_prior, bias, delta):
        arr.setflags(write=False)
    return NbModel(counters.copy(), log_p, log_q, log_prior, bias, delta)


def fit(samples: Iterable[LabeledSample], m_count: int) -> NbModel:
    return finalize(count(samples, m_count))
