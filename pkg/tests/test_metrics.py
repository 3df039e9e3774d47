import itertools
import random
from fractions import Fraction

import pytest
from hypothesis import given
from hypothesis import strategies as st

from bictriage.metrics import ConfusionCounts, accumulate, compute_metrics, count_predictions, merge


@pytest.mark.parametrize(
    "pred, label, expected",
    [(1, 1, (1, 0, 0, 0)), (0, 0, (0, 1, 0, 0)), (1, 0, (0, 0, 1, 0)), (0, 1, (0, 0, 0, 1))],
)
def test_accumulate(pred, label, expected):
    assert accumulate(ConfusionCounts(), pred, label).as_tuple() == expected


def test_accumulate_rejects_non_binary():
    with pytest.raises(ValueError):
        accumulate(ConfusionCounts(), 2, 0)


def test_merge():
    a, b = ConfusionCounts(1, 2, 0, 0), ConfusionCounts(0, 0, 3, 4)
    assert merge(a, b) == ConfusionCounts(1, 2, 3, 4)
    assert merge(a, ConfusionCounts()) == a
    assert merge(a, b) == merge(b, a)


def test_metrics_example():
    m = compute_metrics(ConfusionCounts(tp=2, tn=3, fp=1, fn=0), exact=True)
    assert (m.ppv, m.npv, m.sns, m.spc, m.acc) == (Fraction(2, 3), 1, 1, Fraction(3, 4), Fraction(5, 6))


def test_all_undefined():
    m = compute_metrics(ConfusionCounts())
    assert all(v is None for v in m.as_dict().values())


def test_partial_degeneracy():
    m = compute_metrics(ConfusionCounts(tp=0, tn=5, fp=0, fn=0))
    assert m.ppv is None and m.sns is None
    assert m.npv == 1 and m.spc == 1 and m.acc == 1


def test_float_equals_correctly_rounded_rational():
    for tp, tn, fp, fn in itertools.product(range(0, 7, 3), repeat=4):
        c = ConfusionCounts(tp, tn, fp, fn)
        f, q = compute_metrics(c), compute_metrics(c, exact=True)
        for name in ("ppv", "npv", "sns", "spc", "acc"):
            a, b = getattr(f, name), getattr(q, name)
            assert (a is None) == (b is None)
            if b is not None:
                assert a == float(b)


counts_st = st.builds(ConfusionCounts, *(st.integers(0, 1000) for _ in range(4)))


@given(counts_st, counts_st, counts_st)
def test_merge_associative(a, b, c):
    assert merge(merge(a, b), c) == merge(a, merge(b, c))


@given(counts_st)
def test_metrics_in_unit_interval(c):
    for v in compute_metrics(c).as_dict().values():
        assert v is None or 0.0 <= v <= 1.0
    if c.total:
        assert compute_metrics(c).acc == (c.tp + c.tn) / c.total


@given(counts_st, counts_st)
def test_pooled_accuracy(a, b):
    pooled = merge(a, b)
    if pooled.total:
        assert compute_metrics(pooled, exact=True).acc == Fraction(a.tp + a.tn + b.tp + b.tn, a.total + b.total)


@given(st.lists(st.tuples(st.integers(0, 1), st.integers(0, 1)), max_size=60), st.randoms())
def test_order_independence(pairs, rnd):
    def fold(ps):
        c = ConfusionCounts()
        for p, y in ps:
            c = accumulate(c, p, y)
        return c

    shuffled = list(pairs)
    rnd.shuffle(shuffled)
    assert fold(pairs) == fold(shuffled) == count_predictions([p for p, _ in pairs], [y for _, y in pairs])
    assert fold(pairs).total == len(pairs)


def test_negative_counts_rejected():
    with pytest.raises(ValueError):
        ConfusionCounts(-1, 0, 0, 0)
