"""Rolling daily evaluation.

For every day after the first: fit each method on the sealed history (all
earlier days, or the last ``window_days`` of them), classify the day's
samples, record confusion counts, then seal the day into the history.
"""

from __future__ import annotations

import hashlib
import logging
import math
import time
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import logreg, max_precision, naive_bayes
from .logreg import SolverConfig
from .max_precision import MpCounters
from .metrics import METRIC_NAMES, ConfusionCounts, MetricsReport, compute_metrics, count_predictions
from .naive_bayes import NbCounters
from .samples import DailyBatch, FeatureSpace, SparseBatch, list_day_files, read_daily_file, read_meta

log = logging.getLogger(__name__)

METHODS = ("mp1", "mp2", "nb", "lr")


class HarnessError(RuntimeError):
    pass


@dataclass(frozen=True)
class RunConfig:
    data_dir: Path
    methods: tuple[str, ...] = METHODS
    mp_threshold: Fraction | str = max_precision.DEFAULT_THRESHOLD
    window_days: int | None = None
    lr_solver: SolverConfig = SolverConfig()
    lr_warm_start: bool = True
    mp_incremental: bool = False
    mp_grid: tuple[Fraction, ...] | None = None
    threads: int = 1

    def __post_init__(self) -> None:
        object.__setattr__(self, "data_dir", Path(self.data_dir))
        methods = tuple(self.methods)
        if not methods:
            raise ValueError("at least one method is required")
        unknown = set(methods) - set(METHODS)
        if unknown:
            raise ValueError(f"unknown methods: {sorted(unknown)}")
        if len(set(methods)) != len(methods):
            raise ValueError("duplicate methods")
        object.__setattr__(self, "methods", methods)
        if self.mp_threshold != "search":
            object.__setattr__(self, "mp_threshold", max_precision.as_threshold(self.mp_threshold))
        if self.window_days is not None and self.window_days < 1:
            raise ValueError("window_days must be >= 1")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")

    def to_dict(self) -> dict:
        t = self.mp_threshold
        return {
            "data_dir": str(self.data_dir),
            "methods": list(self.methods),
            "mp_threshold": t if isinstance(t, str) else f"{t.numerator}/{t.denominator}",
            "window_days": self.window_days,
            "lr_solver": {
                "ridge_lambda": self.lr_solver.ridge_lambda,
                "max_iterations": self.lr_solver.max_iterations,
                "tolerance": self.lr_solver.tolerance,
                "damping": self.lr_solver.damping,
                "intercept": self.lr_solver.intercept,
            },
            "lr_warm_start": self.lr_warm_start,
            "mp_incremental": self.mp_incremental,
            "threads": self.threads,
        }


@dataclass(frozen=True)
class DayResult:
    day: object  # datetime.date
    counts: dict[str, ConfusionCounts]
    metrics: dict[str, MetricsReport]
    train_size: int
    test_size: int
    empty_bics_count: int
    # sha256 of the full prediction vector (labeled and unlabeled samples)
    prediction_digest: dict[str, str]
    details: dict[str, dict] = field(default_factory=dict)
    train_time: dict[str, float] = field(default_factory=dict, compare=False)
    classify_time: dict[str, float] = field(default_factory=dict, compare=False)


@dataclass(frozen=True)
class RunReport:
    methods: tuple[str, ...]
    days: tuple[DayResult, ...]
    macro_averages: dict[str, dict[str, float | None]]
    pooled_metrics: dict[str, MetricsReport]
    pooled_counts: dict[str, ConfusionCounts]


class TrainingState:
    """Sealed training history with streaming NB/MP counters.

    Counters are updated as days are sealed and days leaving a sliding
    window are subtracted back out, so they always equal a batch count over
    the current window. Per-day sample order is kept for the corrective pass.
    """

    def __init__(self, m_count: int, window_days: int | None = None):
        self.m_count = m_count
        self.window_days = window_days
        self._days: deque[tuple[object, SparseBatch, NbCounters, MpCounters]] = deque()
        self.nb = NbCounters(m_count)
        self.mp = MpCounters(m_count)
        self.lr_weights: np.ndarray | None = None

    def seal(self, day, batch: SparseBatch) -> None:
        labeled = batch.select(batch.labels >= 0)
        nb = NbCounters(self.m_count).update_batch(labeled)
        mp = MpCounters(self.m_count).update_batch(labeled)
        self._days.append((day, labeled, nb, mp))
        self.nb = self.nb + nb
        self.mp = self.mp + mp
        while self.window_days is not None and len(self._days) > self.window_days:
            _, _, old_nb, old_mp = self._days.popleft()
            self.nb = self.nb - old_nb
            self.mp = self.mp - old_mp

    @property
    def days(self) -> list:
        return [d[0] for d in self._days]

    @property
    def size(self) -> int:
        return self.nb.total

    def training_batch(self) -> SparseBatch:
        return SparseBatch.concat([d[1] for d in self._days])


def _digest(pred: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(pred, dtype=np.int8).tobytes()).hexdigest()


def _train(method: str, state: TrainingState, train: SparseBatch, config: RunConfig):
    details: dict = {}
    if method == "nb":
        return naive_bayes.finalize(state.nb), details
    if method in ("mp1", "mp2"):
        model = max_precision.fit(
            train,
            state.m_count,
            threshold=config.mp_threshold,
            corrected=method == "mp2",
            grid=config.mp_grid,
            incremental=config.mp_incremental,
            counters=state.mp,
        )
        details["threshold"] = f"{model.threshold.numerator}/{model.threshold.denominator}"
        return model, details
    init = state.lr_weights if config.lr_warm_start else None
    model, report = logreg.fit(train, FeatureSpace(state.m_count), config.lr_solver, init)
    details.update(iterations=report.iterations_used, converged=report.converged, final_nll=report.final_nll)
    return model, details


def _evaluate_method(method: str, state: TrainingState, train: SparseBatch, test: SparseBatch, config: RunConfig):
    t0 = time.perf_counter()
    model, details = _train(method, state, train, config)
    t1 = time.perf_counter()
    pred = model.classify_batch(test)
    t2 = time.perf_counter()
    return model, details, pred, t1 - t0, t2 - t1


def rolling_evaluate(
    config: RunConfig,
    on_day: Callable[[DayResult, TrainingState], None] | None = None,
) -> RunReport:
    """Run the day loop over ``config.data_dir``.

    ``on_day`` is called after each day is evaluated and before it is sealed
    into the training state.
    """
    space = read_meta(config.data_dir)
    files = list_day_files(config.data_dir)
    if len(files) < 2:
        raise HarnessError(f"need at least 2 daily files in {config.data_dir}, found {len(files)}")
    batches = (read_daily_file(p, space) for p in files)
    return evaluate_batches(batches, space.m_count, config, on_day)


def evaluate_batches(
    batches,
    m_count: int,
    config: RunConfig,
    on_day: Callable[[DayResult, TrainingState], None] | None = None,
) -> RunReport:
    state = TrainingState(m_count, config.window_days)
    results: list[DayResult] = []
    pool = ThreadPoolExecutor(config.threads) if config.threads > 1 else None
    try:
        for i, batch in enumerate(batches):
            test = SparseBatch.from_samples(batch.samples, m_count)
            if i > 0:
                result = _evaluate_day(batch, test, state, config, pool)
                results.append(result)
                if on_day is not None:
                    on_day(result, state)
            state.seal(batch.day, test)
    finally:
        if pool is not None:
            pool.shutdown()
    if not results:
        raise HarnessError("need at least 2 days of data")
    macro, pooled, pooled_counts = aggregate(results, config.methods)
    return RunReport(config.methods, tuple(results), macro, pooled, pooled_counts)


def _evaluate_day(batch: DailyBatch, test: SparseBatch, state: TrainingState, config: RunConfig, pool) -> DayResult:
    if state.size == 0:
        raise HarnessError(f"no labeled training samples before {batch.day}")
    train = state.training_batch()
    labeled = test.labels >= 0
    labels = test.labels[labeled]

    if pool is None:
        outcomes = [_evaluate_method(m, state, train, test, config) for m in config.methods]
    else:
        futures = [pool.submit(_evaluate_method, m, state, train, test, config) for m in config.methods]
        outcomes = [f.result() for f in futures]

    counts, metrics, digests, details, t_train, t_cls = {}, {}, {}, {}, {}, {}
    for method, (model, det, pred, tt, tc) in zip(config.methods, outcomes):
        c = count_predictions(pred[labeled], labels)
        counts[method] = c
        metrics[method] = compute_metrics(c)
        digests[method] = _digest(pred)
        details[method] = det
        t_train[method] = tt
        t_cls[method] = tc
        if method == "lr":
            state.lr_weights = np.array(model.weights)
    log.info("%s: %d test samples, %d training samples", batch.day, len(test), state.size)
    return DayResult(
        day=batch.day,
        counts=counts,
        metrics=metrics,
        train_size=state.size,
        test_size=int(labeled.sum()),
        empty_bics_count=int(np.sum(test.nnz == 0)),
        prediction_digest=digests,
        details=details,
        train_time=t_train,
        classify_time=t_cls,
    )


def aggregate(days: Sequence[DayResult], methods: Sequence[str]):
    """Macro (mean of defined daily values) and pooled (summed counts) metrics."""
    if not days:
        raise ValueError("no day results to aggregate")
    macro: dict[str, dict[str, float | None]] = {}
    pooled: dict[str, MetricsReport] = {}
    pooled_counts: dict[str, ConfusionCounts] = {}
    for method in methods:
        total = ConfusionCounts()
        for d in days:
            total = total + d.counts[method]
        pooled_counts[method] = total
        pooled[method] = compute_metrics(total)
        macro[method] = {}
        for name in METRIC_NAMES:
            values = [getattr(d.metrics[method], name) for d in days]
            values = [v for v in values if v is not None]
            macro[method][name] = math.fsum(values) / len(values) if values else None
    return macro, pooled, pooled_counts
