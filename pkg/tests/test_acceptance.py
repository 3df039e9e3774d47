"""Acceptance criteria 1-8, each at its stated tolerance and time limit.

Every test prints one ``criterion N: PASS|FAIL`` line and the same lines are
repeated in the pytest terminal summary.
"""

import csv
import io
import json
import math
import subprocess
import sys
import time
from fractions import Fraction

import numpy as np
import pytest

from bictriage import datagen, harness, logreg, max_precision, naive_bayes, store
from bictriage.harness import RunConfig
from bictriage.logreg import LogRegModel, SolverConfig
from bictriage.max_precision import MpCounters
from bictriage.metrics import ConfusionCounts, compute_metrics
from bictriage.naive_bayes import NbCounters
from bictriage.samples import (
    FeatureSpace,
    LabeledSample,
    SparseBatch,
    dense_vector,
    list_day_files,
    read_daily_file,
    read_meta,
    save_daily_file,
    write_meta,
)

from . import conftest
from .conftest import random_samples
from .oracles import confusion_metrics, mp_errors_by_recount, nb_instances, nb_product_class

F = Fraction


def verdict(capsys, number, title, ok, detail, elapsed, limit):
    within = limit is None or elapsed < limit
    status = "PASS" if ok and within else "FAIL"
    budget = "no time limit" if limit is None else f"limit {limit:g}s"
    line = f"criterion {number}: {status}  {title}  [{detail}; {elapsed:.1f}s, {budget}]"
    conftest.ACCEPTANCE_LINES.append(line)
    with capsys.disabled():
        print("\n" + line)
    assert ok, line
    assert within, line


# -- 1 ----------------------------------------------------------------------------------

# (tp, tn, fp, fn) -> (ppv, npv, sns, spc, acc), worked out by hand; None = undefined
TABLES = [
    ((1, 1, 1, 1), (F(1, 2), F(1, 2), F(1, 2), F(1, 2), F(1, 2))),
    ((0, 0, 0, 0), (None, None, None, None, None)),
    ((5, 0, 0, 0), (F(1), None, F(1), None, F(1))),
    ((0, 5, 0, 0), (None, F(1), None, F(1), F(1))),
    ((0, 0, 5, 0), (F(0), None, None, F(0), F(0))),
    ((0, 0, 0, 5), (None, F(0), F(0), None, F(0))),
    ((3, 4, 1, 2), (F(3, 4), F(2, 3), F(3, 5), F(4, 5), F(7, 10))),
    ((90, 5, 3, 2), (F(30, 31), F(5, 7), F(45, 46), F(5, 8), F(19, 20))),
    ((10, 80, 0, 10), (F(1), F(8, 9), F(1, 2), F(1), F(9, 10))),
    ((0, 7, 3, 0), (F(0), F(1), None, F(7, 10), F(7, 10))),
    ((2, 0, 0, 3), (F(1), F(0), F(2, 5), None, F(2, 5))),
    ((7, 3, 0, 0), (F(1), F(1), F(1), F(1), F(1))),
    ((0, 0, 4, 6), (F(0), F(0), F(0), F(0), F(0))),
    ((1, 0, 2, 0), (F(1, 3), None, F(1), F(0), F(1, 3))),
    ((0, 1, 0, 2), (None, F(1, 3), F(0), F(1), F(1, 3))),
    ((12, 33, 6, 9), (F(2, 3), F(11, 14), F(4, 7), F(11, 13), F(3, 4))),
    ((1000000, 1, 1, 0), (F(1000000, 1000001), F(1), F(1), F(1, 2), F(1000001, 1000002))),
    ((3, 3, 3, 3), (F(1, 2), F(1, 2), F(1, 2), F(1, 2), F(1, 2))),
    ((50, 25, 25, 0), (F(2, 3), F(1), F(1), F(1, 2), F(3, 4))),
    ((4, 9, 2, 1), (F(2, 3), F(9, 10), F(4, 5), F(9, 11), F(13, 16))),
]


def test_criterion_1_metrics_exactness(capsys):
    t0 = time.perf_counter()
    names = ("ppv", "npv", "sns", "spc", "acc")
    bad = []
    for counts, expected in TABLES:
        c = ConfusionCounts(*counts)
        exact = compute_metrics(c, exact=True)
        approx = compute_metrics(c)
        # the hand values themselves agree with the defining ratios
        assert tuple(confusion_metrics(*counts)[n] for n in names) == expected
        for name, want in zip(names, expected):
            got, got_f = getattr(exact, name), getattr(approx, name)
            if want is None:
                ok = got is None and got_f is None
            else:
                ok = isinstance(got, Fraction) and got == want and got_f == float(want)
            if not ok:
                bad.append((counts, name))
    elapsed = time.perf_counter() - t0
    verdict(capsys, 1, "metrics exactness", not bad and len(TABLES) == 20,
            f"{len(TABLES)} tables, {len(bad)} mismatches", elapsed, 1)


# -- 2 ----------------------------------------------------------------------------------


def test_criterion_2_nb_oracle(capsys):
    t0 = time.perf_counter()
    n_instances = n_checks = n_ties = 0
    disagreements = []
    for m, pairs in nb_instances(4, 3):
        n_instances += 1
        samples = [LabeledSample(f"n{i}", tuple(j for j, v in enumerate(x) if v), y) for i, (x, y) in enumerate(pairs)]
        model = naive_bayes.fit(samples, m)
        for bits in range(2**m):
            x = [(bits >> j) & 1 for j in range(m)]
            query = LabeledSample("q", tuple(j for j in range(m) if x[j]), None)
            expected, tie = nb_product_class(pairs, m, x)
            got = model.classify(query)
            n_checks += 1
            n_ties += tie
            if got == expected:
                continue
            if tie:
                # an exact rational tie may round either way in log space
                s0, s1 = model.scores(query)
                if abs(s1 - s0) <= 1e-12 * max(abs(s0), abs(s1)):
                    continue
            disagreements.append((pairs, x))
    # initial likelihood of 1/2 for an empty class
    half = naive_bayes.finalize(NbCounters(3, [[0, 0, 0], [1, 0, 2]], [0, 2]))
    half_ok = bool(np.all(np.exp(half.log_p[0]) == 0.5))
    elapsed = time.perf_counter() - t0
    verdict(capsys, 2, "NB product-form oracle", not disagreements and half_ok,
            f"{n_instances} training sets, {n_checks} decisions, {n_ties} exact ties, "
            f"{len(disagreements)} disagreements, p(0,0)=1/2 {half_ok}", elapsed, 10)


# -- 3 ----------------------------------------------------------------------------------


def _nll_long(w, x, y, lam):
    """Dense objective in extended precision, independent of the package."""
    z = x @ w
    return np.sum(np.logaddexp(np.longdouble(0), z) - y * z) + np.longdouble(lam) / 2 * np.dot(w, w)


def test_criterion_3_lr_derivatives(capsys):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    lam = SolverConfig().ridge_lambda
    h = 1e-5
    worst_g = worst_h = 0.0
    monotone = True
    for _ in range(50):
        n, m = int(rng.integers(1, 33)), int(rng.integers(1, 17))
        samples = random_samples(rng, n, m, p=rng.uniform(0.05, 0.6))
        w = rng.normal(size=m)
        cfg = SolverConfig(ridge_lambda=lam)
        model = LogRegModel(w, m, cfg)
        x = np.array([dense_vector(s, FeatureSpace(m)) for s in samples], dtype=np.longdouble)
        y = np.array([s.label for s in samples], dtype=np.longdouble)
        wl = w.astype(np.longdouble)
        eye = np.eye(m, dtype=np.longdouble)
        fd = np.array([(_nll_long(wl + h * e, x, y, lam) - _nll_long(wl - h * e, x, y, lam)) / (2 * h) for e in eye])
        g = logreg.gradient(model, samples)
        worst_g = max(worst_g, float(np.max(np.abs(fd - g)) / np.max(np.abs(g))))

        hess = logreg.hessian(model, samples)

        def grad(v):
            return logreg.gradient(LogRegModel(v, m, cfg), samples)

        fd_h = np.column_stack([(grad(w + h * e) - grad(w - h * e)) / (2 * h) for e in np.eye(m)])
        worst_h = max(worst_h, float(np.max(np.abs(fd_h - hess)) / np.max(np.abs(hess))))

        _, report = logreg.fit(samples, FeatureSpace(m), cfg)
        hist = report.nll_history
        monotone &= all(b <= a for a, b in zip(hist, hist[1:]))

    closed = [LabeledSample(f"c{i}", (0,), int(i < 6)) for i in range(10)]
    fitted, rep = logreg.fit(closed, FeatureSpace(1), SolverConfig(ridge_lambda=0.0))
    closed_err = abs(fitted.weights[0] - math.log(6 / 4))
    elapsed = time.perf_counter() - t0
    ok = worst_g <= 1e-6 and worst_h <= 1e-5 and monotone and closed_err <= 1e-8 and rep.converged
    verdict(capsys, 3, "LR gradient/Hessian", ok,
            f"grad rel err {worst_g:.1e}, Hessian rel err {worst_h:.1e}, nll monotone {monotone}, "
            f"|w-ln1.5|={closed_err:.1e}", elapsed, 30)


# -- 4 ----------------------------------------------------------------------------------


def _brute_score(c, sample):
    return max((F(int(c.t[m]), int(c.t[m] + c.f[m])) if c.t[m] + c.f[m] else F(0) for m in sample.bics),
               default=F(0))


def test_criterion_4_mp_mechanics(capsys):
    t0 = time.perf_counter()
    rng = np.random.default_rng(77)
    problems = []

    # exact rational scores
    t = np.concatenate([rng.integers(0, 1000, 200), rng.integers(0, 2**40, 50), [0, 0, 99, 1]])
    f = np.concatenate([rng.integers(0, 1000, 200), rng.integers(0, 2**40, 50), [0, 5, 1, 9]])
    c = MpCounters(len(t), t, f)
    scores = max_precision.compute_scores(c)
    for m in range(len(t)):
        want = F(int(t[m]), int(t[m] + f[m])) if t[m] + f[m] else F(0)
        if c.exact_score(m) != want or scores[m] != float(want):
            problems.append(("score", m))

    # conservation and non-negativity
    passes = 0
    for incremental in (False, True):
        for _ in range(1000):
            m = int(rng.integers(1, 12))
            c = MpCounters(m, rng.integers(0, 8, m), rng.integers(0, 8, m))
            samples = random_samples(rng, int(rng.integers(1, 60)), m, p=rng.uniform(0.05, 0.5))
            out = max_precision.corrective_pass(c, F(int(rng.integers(1, 100)), 100), samples, incremental=incremental)
            passes += 1
            if not np.array_equal(out.t + out.f, c.t + c.f) or (out.t < 0).any() or (out.f < 0).any():
                problems.append(("pass", passes))

    # hand traces
    fp = max_precision.corrective_pass(MpCounters(1, [99], [1]), "0.99", [LabeledSample("a", (0,), 0)])
    fn = max_precision.corrective_pass(MpCounters(1, [1], [9]), "0.99", [LabeledSample("b", (0,), 1)])
    traces = (fp.t[0], fp.f[0], fn.t[0], fn.f[0]) == (98, 2, 2, 8) and fp.exact_score(0) == F(98, 100)
    if not traces:
        problems.append(("trace",))

    # threshold search against an exhaustive recount
    for _ in range(100):
        m = int(rng.integers(1, 15))
        samples = random_samples(rng, int(rng.integers(1, 101)), m, p=rng.uniform(0.05, 0.4))
        counters = max_precision.count(samples, m)
        pairs = [(_brute_score(counters, s), s.label) for s in samples]
        grid = {F(int(k), 200) for k in rng.integers(1, 200, 40)}
        grid |= {s for s, _ in pairs if 0 < s < 1}
        grid = sorted(grid) or [F(1, 2)]
        errors = {g: mp_errors_by_recount(pairs, g) for g in grid}
        chosen = max_precision.fit_threshold(counters, samples, grid)
        best = min(errors.values())
        if errors[chosen] != best or chosen != max(g for g, e in errors.items() if e == best):
            problems.append(("threshold", chosen))
    elapsed = time.perf_counter() - t0
    verdict(capsys, 4, "MP mechanics", not problems,
            f"{len(t)} scores exact, {passes} randomized passes, traces {traces}, 100 threshold searches, "
            f"{len(problems)} problems", elapsed, 30)


# -- 5 ----------------------------------------------------------------------------------


def _sealed(result):
    """Deterministic bytes of a DayResult (timings excluded)."""
    doc = {
        "day": result.day.isoformat(),
        "counts": {k: list(v.as_tuple()) for k, v in result.counts.items()},
        "metrics": {k: {n: repr(x) for n, x in v.as_dict().items()} for k, v in result.metrics.items()},
        "sizes": [result.train_size, result.test_size, result.empty_bics_count],
        "digest": result.prediction_digest,
        "details": {k: {n: repr(x) for n, x in v.items()} for k, v in result.details.items()},
    }
    return json.dumps(doc, sort_keys=True).encode()


def test_criterion_5_causality_and_streaming(tmp_path, capsys):
    t0 = time.perf_counter()
    spec = datagen.default_profile(m_count=64, samples_per_day=400, days=10, seed=5)
    base_dir = tmp_path / "base"
    datagen.write_dataset(spec, base_dir)
    space = read_meta(base_dir)
    days = [read_daily_file(p, space) for p in list_day_files(base_dir)]
    base = harness.rolling_evaluate(RunConfig(base_dir))
    problems = []

    rng = np.random.default_rng(9)
    for d in (2, 5, 9):
        mutated_dir = tmp_path / f"mut{d}"
        mutated_dir.mkdir()
        write_meta(mutated_dir, space)
        for i, batch in enumerate(days):
            if i == d:
                flips = rng.random(len(batch)) < 0.5
                batch = type(batch)(batch.day, tuple(
                    LabeledSample(s.id, s.bics, 1 - s.label if flip else s.label) for s, flip in zip(batch, flips)
                ))
            save_daily_file(mutated_dir, batch)
        other = harness.rolling_evaluate(RunConfig(mutated_dir))
        # result index i is day i + 1
        for i in range(d - 1):
            if _sealed(other.days[i]) != _sealed(base.days[i]):
                problems.append(("sealed", d, i + 1))
        # day d's own counts change with its labels; its predictions may not
        same, ref = other.days[d - 1], base.days[d - 1]
        if (same.prediction_digest, same.details, same.train_size) != (ref.prediction_digest, ref.details,
                                                                        ref.train_size):
            problems.append(("day", d))
        if same.counts == ref.counts:
            problems.append(("mutation not visible", d))

    checked = 0
    for window in (None, 3):
        def check(result, state, window=window):
            nonlocal checked
            i = [b.day for b in days].index(result.day)
            lo = 0 if window is None else max(0, i - window)
            labeled = [s for b in days[lo:i] for s in b.samples if s.label is not None]
            if state.nb != naive_bayes.count(labeled, space.m_count) or \
                    state.mp != max_precision.count(labeled, space.m_count):
                problems.append(("stream", window, result.day))
            checked += 1

        harness.rolling_evaluate(RunConfig(base_dir, window_days=window), on_day=check)
    elapsed = time.perf_counter() - t0
    verdict(capsys, 5, "harness causality and streaming", not problems and checked == 18,
            f"3 label mutations, {checked} streaming checks, {len(problems)} problems", elapsed, 30)


# -- 6 ----------------------------------------------------------------------------------


def test_criterion_6_synthetic_convergence(capsys):
    t0 = time.perf_counter()
    spec = datagen.default_profile(seed=0)
    assert (spec.m_count, spec.prior_malicious, spec.samples_per_day, spec.days) == (256, 0.32, 5000, 30)
    counters = MpCounters(spec.m_count)
    samples_seen = 0
    for batch in datagen.generate(spec):
        counters.update_batch(SparseBatch.from_samples(batch.samples, spec.m_count))
        samples_seen += len(batch)
    model = max_precision.MpModel.from_counters(counters, "0.99")

    checked, worst, violations = 0, 0.0, []
    for m in range(spec.m_count):
        triggers = int(counters.t[m] + counters.f[m])
        if triggers < 1000:
            continue
        p = datagen.analytic_precision(spec, m)
        bound = 4 * math.sqrt(p * (1 - p) / triggers)
        dev = abs(model.scores[m] - p)
        worst = max(worst, dev / bound if bound else (0.0 if dev == 0 else math.inf))
        checked += 1
        if dev > bound:
            violations.append(m)

    p0, p1 = datagen.analytic_precision(spec, 0), datagen.analytic_precision(spec, 1)
    straddle = p0 >= 0.99 > p1 and abs(p0 - 0.995) < 1e-12 and abs(p1 - 0.985) < 1e-12
    only0 = [LabeledSample(f"a{i}", (0,), None) for i in range(3)]
    only1 = [LabeledSample(f"b{i}", (1,), None) for i in range(3)]
    planted = [model.classify(s) for s in only0] == [1, 1, 1] and [model.classify(s) for s in only1] == [0, 0, 0]
    elapsed = time.perf_counter() - t0
    ok = samples_seen >= 10**5 and checked > 0 and not violations and straddle and planted
    verdict(capsys, 6, "synthetic convergence", ok,
            f"{samples_seen} samples, {checked} BICs with >=1000 triggers, worst |dev|/bound {worst:.2f}, "
            f"S_0={model.scores[0]:.4f} S_1={model.scores[1]:.4f}, planted {planted}", elapsed, 60)


# -- 7 ----------------------------------------------------------------------------------


def _pipeline(root):
    data, out = root / "data", root / "results"
    cmd = [sys.executable, "-m", "bictriage"]
    subprocess.run(cmd + ["generate", "--out", str(data), "--seed", "0"], check=True, capture_output=True)
    subprocess.run(cmd + ["evaluate", "--data", str(data), "--out", str(out), "--methods", "mp1,mp2,nb,lr"],
                   check=True, capture_output=True)
    return data, (out / "report.csv").read_bytes()


def test_criterion_7_end_to_end(tmp_path, capsys):
    t0 = time.perf_counter()
    data1, csv1 = _pipeline(tmp_path / "run1")
    t1 = time.perf_counter()
    _, csv2 = _pipeline(tmp_path / "run2")
    n_days = len(list_day_files(data1))
    rows = list(csv.DictReader(io.StringIO(csv1.decode())))
    in_range = all(
        row[k] == "" or 0.0 <= float(row[k]) <= 1.0 for row in rows for k in ("ppv", "npv", "sns", "spc", "acc")
    )
    ok = csv1 == csv2 and len(rows) == 4 * (n_days - 1) and in_range
    single = t1 - t0
    verdict(capsys, 7, "end-to-end determinism", ok,
            f"identical CSV {csv1 == csv2}, {len(rows)} rows for {n_days} days, metrics in [0,1] {in_range}, "
            f"one pipeline {single:.1f}s", single, 300)


# -- 8 ----------------------------------------------------------------------------------


def test_criterion_8_model_round_trip(tmp_path, capsys):
    t0 = time.perf_counter()
    spec = datagen.default_profile(samples_per_day=2000, days=3, seed=3)
    train = [s for b in datagen.generate(spec) for s in b.samples]
    m = spec.m_count
    models = {
        "logreg": logreg.fit(train, FeatureSpace(m))[0],
        "logreg+intercept": logreg.fit(train, FeatureSpace(m), SolverConfig(intercept=True))[0],
        "nb": naive_bayes.fit(train, m),
        "mp1": max_precision.fit(train, m),
        "mp2": max_precision.fit(train, m, corrected=True),
        "mp2-search": max_precision.fit(train, m, threshold="search", corrected=True),
    }
    rng = np.random.default_rng(8)
    probe = []
    for i in range(10_000):
        k = int(rng.integers(0, 12))
        probe.append(LabeledSample(f"p{i}", tuple(sorted(rng.choice(m, size=k, replace=False).tolist())), None))
    batch = SparseBatch.from_samples(probe, m)
    changed = {}
    for name, model in models.items():
        path = tmp_path / f"{name}.json"
        store.save(model, path)
        back = store.load(path)
        single = sum(model.classify(s) != back.classify(s) for s in probe)
        batched = int(np.sum(model.classify_batch(batch) != back.classify_batch(batch)))
        changed[name] = single + batched
    elapsed = time.perf_counter() - t0
    verdict(capsys, 8, "model round-trip", not any(changed.values()),
            f"{len(models)} models x {len(probe)} samples, changed decisions {sum(changed.values())}", elapsed,
            None)
