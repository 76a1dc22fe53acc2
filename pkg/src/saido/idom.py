"""Importance-guided gradient transformation for continual training of one expert.

Per parameter block (A, B, W, b) an :class:`ImportanceState` tracks

* class-conditional diagonal Fisher importance of the task in progress,
  averaged per scene and then across scenes;
* the running sum of importances over finished tasks, per class;
* the OR of all per-task, per-class core masks (top ``alpha`` fraction);
* a reference gradient direction from finished tasks.

From the second task on, :func:`transform_gradient` splits each block's
gradient into the part parallel to the reference direction and the orthogonal
rest, mixes them entry by entry according to the real/fake importance ratio,
damps important entries, and leaves non-core entries untouched.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .numcore import top_fraction_mask

log = logging.getLogger(__name__)

REAL, FAKE = 0, 1


@dataclass(frozen=True)
class IdomConfig:
    alpha: float = 0.75
    e: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if self.e < 0:
            raise ValueError("e must be >= 0")


@dataclass
class ImportanceState:
    shapes: dict
    fisher_sum: dict = field(default_factory=dict)  # (scene, c) -> {block: sum of g*g}
    fisher_count: dict = field(default_factory=dict)  # (scene, c) -> sample count
    I_hist: dict = field(default_factory=dict)  # c -> {block: array}
    M_bar: dict = field(default_factory=dict)  # block -> int8 array
    g_ref: dict = field(default_factory=dict)  # block -> array, empty until first finalize
    ref_sum: dict = field(default_factory=dict)  # block -> sum of recorded task gradients
    ref_count: int = 0
    tasks_seen: int = 0

    @classmethod
    def for_params(cls, params):
        shapes = {k: np.shape(v) for k, v in params.items()}
        st = cls(shapes=shapes)
        st.I_hist = {c: {k: np.zeros(s) for k, s in shapes.items()} for c in (REAL, FAKE)}
        st.M_bar = {k: np.zeros(s, dtype=np.int8) for k, s in shapes.items()}
        return st

    def _check(self, grads):
        if set(grads) != set(self.shapes):
            raise ValueError(f"gradient blocks {sorted(grads)} != state blocks {sorted(self.shapes)}")
        for k, g in grads.items():
            if np.shape(g) != self.shapes[k]:
                raise ValueError(f"block {k}: shape {np.shape(g)} != {self.shapes[k]}")


def accumulate_fisher(state, sample_grad, c, scene):
    """Add one sample's squared log-likelihood gradient to the (scene, class) accumulator."""
    state._check(sample_grad)
    if c not in (REAL, FAKE):
        raise ValueError(f"class tag must be 0 or 1, got {c}")
    for g in sample_grad.values():
        if not np.all(np.isfinite(g)):
            raise ValueError("non-finite gradient in Fisher accumulation")
    key = (scene, int(c))
    acc = state.fisher_sum.setdefault(key, {k: np.zeros(s) for k, s in state.shapes.items()})
    for k, g in sample_grad.items():
        acc[k] += np.square(g)
    state.fisher_count[key] = state.fisher_count.get(key, 0) + 1


def accumulate_fisher_batch(state, per_sample_grads, labels, scenes):
    """Vectorised :func:`accumulate_fisher` over a leading sample axis."""
    labels = np.asarray(labels)
    scenes = np.asarray(scenes, dtype=object)
    for k, g in per_sample_grads.items():
        if not np.all(np.isfinite(g)):
            raise ValueError("non-finite gradient in Fisher accumulation")
        if g.shape[1:] != state.shapes[k]:
            raise ValueError(f"block {k}: per-sample shape {g.shape[1:]} != {state.shapes[k]}")
    for key in sorted({(s, int(c)) for s, c in zip(scenes, labels)}):
        sel = (scenes == key[0]) & (labels == key[1])
        acc = state.fisher_sum.setdefault(key, {k: np.zeros(s) for k, s in state.shapes.items()})
        for k, g in per_sample_grads.items():
            acc[k] += np.square(g[sel]).sum(axis=0)
        state.fisher_count[key] = state.fisher_count.get(key, 0) + int(sel.sum())


def current_importance(state, c):
    """Importance of the running task for class ``c``: per-scene means averaged over scenes.

    Scenes with no samples of class ``c`` are left out of the average.
    """
    keys = sorted(k for k in state.fisher_sum if k[1] == c and state.fisher_count[k] > 0)
    out = {k: np.zeros(s) for k, s in state.shapes.items()}
    for key in keys:
        n = state.fisher_count[key]
        for k in out:
            out[k] += state.fisher_sum[key][k] / n
    if keys:
        for k in out:
            out[k] /= len(keys)
    return out


def compute_mask(importance, alpha):
    """Core-entry mask with exactly ``ceil(alpha * N)`` ones (ties go to later entries)."""
    return top_fraction_mask(importance, alpha)


def record_reference_gradient(state, grads):
    """Store one raw (untransformed) training gradient of the task in progress."""
    state._check(grads)
    for k, g in grads.items():
        state.ref_sum[k] = state.ref_sum.get(k, 0.0) + np.asarray(g, dtype=np.float64)
    state.ref_count += 1


def finalize_task(state, alpha):
    """Close the task: fold masks, importances and the reference gradient into history."""
    if not state.fisher_count:
        raise ValueError("finalize_task called before any Fisher accumulation")
    if state.ref_count == 0:
        raise ValueError("finalize_task called without recorded reference gradients")
    flat = []
    for c in (REAL, FAKE):
        I = current_importance(state, c)
        for k in state.shapes:
            if not np.any(I[k]):
                flat.append(f"{k}/class{c}")
            state.M_bar[k] |= compute_mask(I[k], alpha).astype(np.int8)
            state.I_hist[c][k] = state.I_hist[c][k] + I[k]
    if flat:
        # saturated predictions give exactly zero log-likelihood gradients
        log.info("all-zero importance in %s; masks there follow tie order", ", ".join(flat))
    t = state.tasks_seen
    for k in state.shapes:
        task_ref = state.ref_sum[k] / state.ref_count
        state.g_ref[k] = task_ref if t == 0 else (t * state.g_ref[k] + task_ref) / (t + 1)
    state.fisher_sum.clear()
    state.fisher_count.clear()
    state.ref_sum.clear()
    state.ref_count = 0
    state.tasks_seen += 1


def project(g, g_ref):
    """Split ``g`` into ``(g_p, g_o)``: component along ``g_ref`` and the orthogonal rest.

    If ``g_ref`` is (numerically) zero there is no direction to keep and the
    result is ``(0, g)``.
    """
    g = np.asarray(g, dtype=np.float64)
    g_ref = np.asarray(g_ref, dtype=np.float64)
    if g.shape != g_ref.shape:
        raise ValueError(f"projection shape mismatch {g.shape} vs {g_ref.shape}")
    nrm2 = float(np.vdot(g_ref, g_ref))
    if np.sqrt(nrm2) <= 1e-12:
        return np.zeros_like(g), g.copy()
    c = float(np.vdot(g, g_ref)) / nrm2
    g_o = g - c * g_ref
    # second Gram-Schmidt pass removes the rounding residue along g_ref
    c2 = float(np.vdot(g_o, g_ref)) / nrm2
    g_o = g_o - c2 * g_ref
    if np.linalg.norm(g_o) <= 1e-12 * np.linalg.norm(g):
        # g is parallel to g_ref up to rounding
        return g.copy(), np.zeros_like(g)
    return (c + c2) * g_ref, g_o


def control_factors(I_real, I_fake):
    """Per-entry weights ``(q0, q1)`` on the parallel and orthogonal components.

    ``q0 = I_real / (I_real + I_fake)``, ``q1 = 1 - q0``; entries where both
    importances vanish get (0.5, 0.5).
    """
    I0 = np.asarray(I_real, dtype=np.float64)
    I1 = np.asarray(I_fake, dtype=np.float64)
    if np.any(I0 < 0) or np.any(I1 < 0):
        raise ValueError("importances must be non-negative")
    tot = I0 + I1
    safe = np.where(tot > 0, tot, 1.0)
    q0 = np.where(tot > 0, I0 / safe, 0.5)
    q1 = 1.0 - q0
    if q0.ndim == 0:
        return float(q0), float(q1)
    return q0, q1


def scale_factor(I_norm, e):
    """Damping ``1 / (1 + e * I_norm)`` for normalized importance in [0, 1]."""
    I = np.asarray(I_norm, dtype=np.float64)
    if np.any(I < 0) or np.any(I > 1) or not np.all(np.isfinite(I)):
        raise ValueError("normalized importance must lie in [0, 1]")
    if e < 0:
        raise ValueError("e must be >= 0")
    u = 1.0 / (1.0 + e * I)
    return float(u) if u.ndim == 0 else u


def normalize_importance(I):
    """Min-max scale to [0, 1]; a constant array maps to zeros."""
    I = np.asarray(I, dtype=np.float64)
    lo, hi = I.min(), I.max()
    if hi - lo <= 0:
        return np.zeros_like(I)
    return np.clip((I - lo) / (hi - lo), 0.0, 1.0)


def transform_block(g, g_ref, I_real, I_fake, M_bar, e):
    """Transformed gradient ``w = g_A + g_B`` for one parameter block."""
    g = np.asarray(g, dtype=np.float64)
    g_p, g_o = project(g.ravel(), np.asarray(g_ref).ravel())
    q0, q1 = control_factors(np.ravel(I_real), np.ravel(I_fake))
    g_tilde = q0 * g_p + q1 * g_o
    u = scale_factor(normalize_importance(np.ravel(I_real) + np.ravel(I_fake)), e)
    core = np.ravel(M_bar) == 1
    g_A = np.where(core, u * g_tilde, 0.0)
    g_B = np.where(core, 0.0, g.ravel())
    return (g_A + g_B).reshape(g.shape)


def transform_gradient(grads, state, cfg):
    """Apply the importance-guided transformation to every block.

    Before the first finished task the gradient passes through unchanged.
    """
    state._check(grads)
    if state.tasks_seen == 0:
        return {k: np.array(g, dtype=np.float64) for k, g in grads.items()}
    return {
        k: transform_block(
            g, state.g_ref[k], state.I_hist[REAL][k], state.I_hist[FAKE][k], state.M_bar[k], cfg.e
        )
        for k, g in grads.items()
    }


def input_orthogonal_update(delta, stored_inputs, rtol=1e-12):
    """Remove from ``delta`` (out x in) every component acting on the span of ``stored_inputs``.

    For a linear map ``E`` and stored inputs ``X`` (rows), the returned update
    ``D`` satisfies ``D @ x == 0`` for every ``x`` in the row space of ``X``,
    so ``(E + D)`` reproduces ``E`` on all stored inputs.
    """
    delta = np.asarray(delta, dtype=np.float64)
    X = np.atleast_2d(np.asarray(stored_inputs, dtype=np.float64))
    if X.shape[1] != delta.shape[1]:
        raise ValueError(f"input width {X.shape[1]} != update width {delta.shape[1]}")
    _, s, vt = np.linalg.svd(X, full_matrices=False)
    basis = vt[s > rtol * max(s.max(initial=0.0), 1e-300)]
    return delta - (delta @ basis.T) @ basis
