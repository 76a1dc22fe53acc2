"""Continual-learning metrics over the session-by-task accuracy matrix.

``a[k][j]`` is the accuracy on task ``j`` after finishing session ``k``
(both 1-based, ``j <= k``).

Metrics are evaluated in exact rational arithmetic on each entry's shortest
decimal form and rounded once at the end, so hand-computed values such as
``1.0 - 0.8 = 0.2`` come out exactly.
"""
from __future__ import annotations

from fractions import Fraction


def _q(x):
    return Fraction(repr(float(x)))


class AccuracyMatrix:
    def __init__(self):
        self._a = {}

    def record(self, k, j, acc):
        if not (1 <= j <= k):
            raise ValueError(f"entry ({k}, {j}) outside the lower triangle")
        if not 0.0 <= acc <= 1.0:
            raise ValueError(f"accuracy {acc} outside [0, 1]")
        if (k, j) in self._a:
            raise ValueError(f"entry ({k}, {j}) already recorded")
        self._a[(k, j)] = float(acc)
        return self

    def get(self, k, j):
        return self._a[(k, j)]

    @property
    def sessions(self):
        return max((k for k, _ in self._a), default=0)

    def row(self, k):
        missing = [j for j in range(1, k + 1) if (k, j) not in self._a]
        if missing:
            raise ValueError(f"row {k} incomplete: missing tasks {missing}")
        return [self._a[(k, j)] for j in range(1, k + 1)]

    def entries(self):
        """``(session, task, accuracy)`` triples in row-major order."""
        return [(k, j, self._a[(k, j)]) for k, j in sorted(self._a)]

    @classmethod
    def from_rows(cls, rows):
        m = cls()
        for k, row in enumerate(rows, start=1):
            for j, acc in enumerate(row, start=1):
                m.record(k, j, acc)
        return m


def aa(m, k):
    """Average accuracy over tasks 1..k after session k."""
    return float(sum(map(_q, m.row(k))) / k)


def af(m, k):
    """Average forgetting after session k: best earlier accuracy minus current, over tasks 1..k-1."""
    if k < 2:
        raise ValueError("forgetting needs at least two sessions")
    for t in range(1, k + 1):
        m.row(t)
    drops = [max(_q(m.get(t, j)) for t in range(j, k)) - _q(m.get(k, j)) for j in range(1, k)]
    return float(sum(drops) / (k - 1))


def new_acc(m, K):
    """Mean accuracy of each session on its own task."""
    missing = [k for k in range(1, K + 1) if (k, k) not in m._a]
    if K < 1 or missing:
        raise ValueError(f"diagonal incomplete: missing sessions {missing}")
    return float(sum(_q(m.get(k, k)) for k in range(1, K + 1)) / K)
