import math
import time

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import auc_pairs
from fibrorad.metrics import MetricSummary, auc, ci_normal, roc_points, sens_spec


def test_auc_examples():
    assert auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == 0.75
    assert auc([1, 2, 3, 4], [0, 0, 1, 1]) == 1.0
    assert auc([5, 5, 5], [0, 1, 1]) == 0.5


def test_auc_single_class():
    with pytest.raises(ValueError):
        auc([0.1, 0.2], [1, 1])


def test_auc_matches_pair_oracle():
    rng = np.random.default_rng(0)
    t0 = time.perf_counter()
    for _ in range(1000):
        n = int(rng.integers(2, 51))
        y = rng.integers(0, 2, n)
        y[0], y[1] = 0, 1
        s = rng.integers(0, 6, n) / 5.0  # coarse grid forces ties
        assert abs(auc(s, y) - auc_pairs(s, y)) <= 1e-12
    assert time.perf_counter() - t0 < 5.0


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_auc_symmetry_and_monotone_invariance(seed):
    rng = np.random.default_rng(seed)
    s = rng.normal(size=30)
    y = np.r_[0, 1, rng.integers(0, 2, 28)]
    assert auc(s, y) + auc(-s, y) == pytest.approx(1.0, abs=1e-12)
    assert auc(np.exp(3 * s) + 1, y) == auc(s, y)


def test_sens_spec_examples():
    assert sens_spec([0.6, 0.4], [1, 1], 0.5)[0] == 0.5
    assert sens_spec([0.3, 0.7, 0.9], [0, 1, 0], 0.0) == (1.0, 0.0)
    scores = [0.1] * 10 + [0.9]
    assert sens_spec(scores + [0.8], [0] * 11 + [1], 0.5)[1] == 10 / 11


def test_sens_spec_missing_class_is_nan():
    sens, spec = sens_spec([0.6, 0.4], [1, 1], 0.5)
    assert math.isnan(spec)


def test_sens_spec_label_flip(rng):
    s = rng.random(40)
    y = np.r_[0, 1, rng.integers(0, 2, 38)]
    sens, spec = sens_spec(s, y, 0.5)
    # flipped labels on negated scores: the positive call becomes s <= 0.5
    sens2, spec2 = sens_spec(-s, 1 - y, -0.5)
    assert (sens2, spec2) == (spec, sens)


def test_ci_examples():
    c = ci_normal([0.9091] * 5)
    assert c.ci_low == c.mean == c.ci_high == pytest.approx(0.9091)
    c = ci_normal([0.0, 1.0])
    assert c.mean == 0.5
    assert c.ci_high - c.mean == pytest.approx(1.96 * math.sqrt(0.5) / math.sqrt(2), rel=1e-12)
    assert ci_normal([0.3]) == MetricSummary(0.3, 0.3, 0.3, 1)
    assert ci_normal([0.9091, 0.9091]).fmt() == "0.9091; 95% CI: [0.9091, 0.9091]"


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=1, max_size=40))
def test_ci_brackets_mean(values):
    c = ci_normal(values)
    assert c.ci_low <= c.mean + 1e-15 and c.mean <= c.ci_high + 1e-15


def test_roc_points():
    fpr, tpr = roc_points([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1])
    assert fpr[0] == tpr[0] == 0 and fpr[-1] == tpr[-1] == 1
    assert np.trapezoid(tpr, fpr) == pytest.approx(0.75)
