import math
import random

import pytest
from hypothesis import given, strategies as st

from tracesynth.analysis import (
    GDP_THRESHOLD,
    HIGHER,
    LOWER,
    classify_by_threshold,
    compare_groups,
    jenks_breaks,
    pct_change_series,
    within_class_ssd,
)
from tracesynth.errors import UsageError

from oracles import brute_jenks, exact_ssd


def groups_of(values, result):
    k = len(result.breaks) + 1
    return [[v for v, c in zip(values, result.classes) if c == i] for i in range(k)]


# -- trends ----------------------------------------------------------------------------


def test_pct_change_examples():
    assert pct_change_series([100, 100, 100]).mean_change == 0
    assert pct_change_series([100, 110]).mean_change == pytest.approx(10)
    tr = pct_change_series([100, 110, 99])
    assert tr.steps == pytest.approx([10, -10])
    assert tr.mean_change == pytest.approx(0)


def test_geometric_series_has_constant_steps():
    tr = pct_change_series([50 * 1.05**i for i in range(8)])
    assert all(s == pytest.approx(5) for s in tr.steps)
    assert tr.cagr == pytest.approx(5)


def test_non_positive_base_is_excluded():
    tr = pct_change_series([0, 10, 20])
    assert tr.steps[0] is None and tr.mean_change == pytest.approx(100)
    assert tr.diagnostics
    with pytest.raises(UsageError):
        pct_change_series([5])
    with pytest.raises(UsageError):
        pct_change_series([0, 0, 0])


@given(st.lists(st.floats(1, 1e6), min_size=2, max_size=15))
def test_mean_change_is_mean_of_steps(xs):
    tr = pct_change_series(xs)
    assert len(tr.steps) == len(xs) - 1
    assert tr.mean_change == pytest.approx(math.fsum(tr.steps) / len(tr.steps))


# -- natural breaks ----------------------------------------------------------------------


def test_jenks_obvious_clusters():
    vals = [1, 2, 3, 10, 11, 12]
    r = jenks_breaks(vals, 2)
    assert r.breaks == [3]
    assert r.classes == [0, 0, 0, 1, 1, 1]
    assert r.ssd == pytest.approx(4)


def test_jenks_degenerate_and_bounds():
    r = jenks_breaks([5, 5, 5, 5], 2)
    assert r.degenerate and r.ssd == 0
    r = jenks_breaks([4, 1, 3, 2], 4)
    assert r.ssd == 0 and sorted(r.classes) == [0, 1, 2, 3]
    with pytest.raises(UsageError):
        jenks_breaks([1, 2], 3)
    with pytest.raises(UsageError):
        jenks_breaks([1, 2, 3], 1)


def test_jenks_matches_exhaustive_search():
    rnd = random.Random(11)
    for _ in range(150):
        n = rnd.randint(2, 12)
        k = rnd.randint(2, min(4, n))
        vals = [rnd.choice([rnd.randint(0, 20), round(rnd.uniform(0, 1e5), 2)]) for _ in range(n)]
        r = jenks_breaks(vals, k)
        opt = brute_jenks(vals, k)
        got = sum(exact_ssd(g) for g in groups_of(vals, r) if g)
        assert math.isclose(float(got), float(opt), rel_tol=1e-9, abs_tol=1e-9)
        assert math.isclose(r.ssd, float(opt), rel_tol=1e-9, abs_tol=1e-6)


@given(st.lists(st.integers(0, 1000), min_size=4, max_size=10), st.randoms(use_true_random=False))
def test_jenks_ignores_input_order(vals, rnd):
    shuffled = vals[:]
    rnd.shuffle(shuffled)
    a, b = jenks_breaks(vals, 3), jenks_breaks(shuffled, 3)
    assert a.breaks == b.breaks
    assert a.ssd == pytest.approx(b.ssd)


def test_within_class_ssd():
    assert within_class_ssd([[1, 2, 3], [10, 11, 12]]) == pytest.approx(4)
    assert within_class_ssd([[], [7]]) == 0


# -- classification -------------------------------------------------------------------


def test_threshold_boundary():
    assert GDP_THRESHOLD == 57_333
    assert classify_by_threshold([57_333, 57_332.99, 90_000, 0]) == [HIGHER, LOWER, HIGHER, LOWER]
    assert classify_by_threshold([]) == []
    assert classify_by_threshold([10], threshold=5) == [HIGHER]


def test_compare_groups():
    labels = {"a": LOWER, "b": LOWER, "c": HIGHER, "d": HIGHER}
    cmp = compare_groups({"a": 20.0, "b": -10.0, "c": 2.0, "d": 4.0}, labels)
    assert cmp.share_rising == {HIGHER: 1.0, LOWER: 0.5}
    assert cmp.mean_change[LOWER] == 5 and cmp.mean_change[HIGHER] == 3
    assert cmp.ratio_of_mean_changes == pytest.approx(5 / 3)
    assert cmp.ratio_of_mean_rises == pytest.approx(20 / 3)
    empty = compare_groups({"a": 1.0}, {"a": LOWER})
    assert math.isnan(empty.ratio_of_mean_changes)
