import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from saido.metrics import AccuracyMatrix, aa, af, new_acc

WORKED = [
    # (rows, k, AA, AF)
    ([[1.0], [0.8, 1.0]], 2, 0.9, 0.2),
    ([[1.0], [1.0, 1.0], [0.5, 1.0, 1.0]], 3, 2.5 / 3, 0.25),
    ([[0.5], [0.75, 0.5]], 2, 0.625, -0.25),
]


@pytest.mark.parametrize("rows, k, want_aa, want_af", WORKED)
def test_worked_matrices(rows, k, want_aa, want_af):
    m = AccuracyMatrix.from_rows(rows)
    assert aa(m, k) == want_aa
    assert af(m, k) == want_af


def test_record_rules():
    m = AccuracyMatrix()
    m.record(1, 1, 0.99)
    assert m.get(1, 1) == 0.99
    with pytest.raises(ValueError):
        m.record(1, 2, 0.5)
    with pytest.raises(ValueError):
        m.record(1, 1, 0.5)
    with pytest.raises(ValueError):
        m.record(2, 1, 1.5)
    with pytest.raises(ValueError):
        m.record(2, 0, 0.5)


def test_single_task_and_errors():
    m = AccuracyMatrix.from_rows([[0.7]])
    assert aa(m, 1) == 0.7 and new_acc(m, 1) == 0.7
    with pytest.raises(ValueError):
        af(m, 1)
    with pytest.raises(ValueError):
        aa(m, 2)
    with pytest.raises(ValueError):
        new_acc(m, 2)


def test_new_acc():
    m = AccuracyMatrix.from_rows([[1.0], [0.3, 0.9]])
    assert new_acc(m, 2) == 0.95


def test_reported_average_is_row_mean():
    m = AccuracyMatrix.from_rows([[0.9561], [0.9561, 0.9561]])
    assert round(100 * aa(m, 2), 2) == 95.61


@given(st.integers(1, 6), st.floats(0, 1))
def test_constant_matrix(K, v):
    m = AccuracyMatrix.from_rows([[v] * k for k in range(1, K + 1)])
    assert aa(m, K) == pytest.approx(v) and new_acc(m, K) == pytest.approx(v)
    if K >= 2:
        assert af(m, K) == pytest.approx(0, abs=1e-15)


@given(st.integers(2, 6), st.data())
def test_ranges_and_no_forgetting(K, data):
    rows = [data.draw(st.lists(st.floats(0, 1), min_size=k, max_size=k)) for k in range(1, K + 1)]
    m = AccuracyMatrix.from_rows(rows)
    assert 0 <= aa(m, K) <= 1 and 0 <= new_acc(m, K) <= 1 and -1 <= af(m, K) <= 1
    # per-task accuracies that never decrease cannot show forgetting
    mono = [[max(rows[t][j] for t in range(j, k)) for j in range(k)] for k in range(1, K + 1)]
    mono = [[max(mono[t][j] for t in range(j, k)) for j in range(k)] for k in range(1, K + 1)]
    assert af(AccuracyMatrix.from_rows(mono), K) <= 1e-15


def test_sample_order_invariance():
    rng = np.random.default_rng(0)
    y = rng.integers(0, 2, 100)
    pred = np.where(rng.uniform(size=100) < 0.8, y, 1 - y)
    perm = rng.permutation(100)
    assert np.mean(pred == y) == np.mean(pred[perm] == y[perm])
