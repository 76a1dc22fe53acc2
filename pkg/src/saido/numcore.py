"""Small dense-math helpers and seeded random streams shared by every module."""
from __future__ import annotations

import hashlib
import math
from fractions import Fraction

import numpy as np


def _finite_array(x, name="input"):
    arr = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def top_count(n, alpha):
    """Number of entries selected by a top-``alpha`` rule over ``n`` values: ceil(alpha * n).

    The float ``alpha`` is converted exactly, so ``0.7 * 10`` selects 7 and never 8.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    return math.ceil(Fraction(alpha) * n)


def _rank_order(values):
    # ascending by value, equal values ordered by index, so among ties the
    # highest index ranks highest
    idx = np.arange(values.size)
    return np.lexsort((idx, values))


def top_fraction_mask(values, alpha):
    """Binary mask with exactly ``ceil(alpha * N)`` ones on the largest entries.

    Ties are resolved by index: equal values later in (flattened) order win.
    The mask has the same shape as ``values``.
    """
    arr = _finite_array(values, "values")
    flat = arr.ravel()
    if flat.size == 0:
        raise ValueError("empty importance set")
    k = top_count(flat.size, alpha)
    mask = np.zeros(flat.size, dtype=np.int8)
    if k:
        mask[_rank_order(flat)[-k:]] = 1
    return mask.reshape(arr.shape)


def quantile_threshold(values, alpha):
    """Value of the ``ceil(alpha * N)``-th largest entry.

    Entries ``>= t`` may outnumber the selected count when ties straddle the
    cut; :func:`top_fraction_mask` gives the count-exact selection. Returns
    ``inf`` for ``alpha`` small enough that nothing is selected.
    """
    flat = _finite_array(values, "values").ravel()
    if flat.size == 0:
        raise ValueError("empty importance set")
    k = top_count(flat.size, alpha)
    if k == 0:
        return math.inf
    return float(flat[_rank_order(flat)[-k]])


def softmax(logits, axis=-1):
    z = _finite_array(logits, "logits")
    z = z - z.max(axis=axis, keepdims=True)
    ez = np.exp(z)
    return ez / ez.sum(axis=axis, keepdims=True)


def log_softmax(logits, axis=-1):
    z = _finite_array(logits, "logits")
    z = z - z.max(axis=axis, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=axis, keepdims=True))


def dot(a, b):
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.ndim != 1 or a.shape != b.shape:
        raise ValueError(f"dot: dimension mismatch {a.shape} vs {b.shape}")
    return float(a @ b)


def matvec(m, x):
    m, x = np.asarray(m, dtype=np.float64), np.asarray(x, dtype=np.float64)
    if m.ndim != 2 or x.ndim != 1 or m.shape[1] != x.shape[0]:
        raise ValueError(f"matvec: dimension mismatch {m.shape} vs {x.shape}")
    return m @ x


def outer(a, b):
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.ndim != 1 or b.ndim != 1:
        raise ValueError("outer: expects two vectors")
    return np.outer(a, b)


def _tag_key(tag):
    return int.from_bytes(hashlib.sha256(tag.encode("utf-8")).digest()[:8], "little")


class SeededRng:
    """Root of a tree of reproducible random streams.

    Streams come from numpy's PCG64 seeded through ``SeedSequence`` with a
    spawn key of ``(sha256(tag)[:8], index)``; the same ``(seed, tag, index)``
    always yields the same stream, on any platform, independent of which other
    streams were drawn before.
    """

    def __init__(self, seed):
        seed = int(seed)
        if not 0 <= seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        self.seed = seed

    def stream(self, tag, index=0):
        ss = np.random.SeedSequence(self.seed, spawn_key=(_tag_key(tag), int(index)))
        return np.random.Generator(np.random.PCG64(ss))

    def __repr__(self):
        return f"SeededRng(seed={self.seed})"
