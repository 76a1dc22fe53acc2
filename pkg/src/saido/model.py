"""Frozen backbone, per-scene low-rank adapters, shared binary head, losses and exact gradients.

Shapes used throughout (``n`` samples, ``d`` feature width, ``r`` adapter rank)::

    h = x_raw @ P                 backbone feature, P is (d_raw, d)
    a = A h                       A is (r, d)
    v = h + B a                   B is (d, r)
    z = W v + b                   W is (2, d), b is (2,)

Batched functions take ``H`` of shape ``(n, d)``, i.e. backbone features
rather than raw inputs, since the backbone is frozen and its output can be
cached once per sample.
"""
from __future__ import annotations

import functools
import hashlib
from dataclasses import dataclass, field

import numpy as np

from .numcore import SeededRng, log_softmax, softmax

PARAM_BLOCKS = ("A", "B", "W", "b")


class FrozenBackbone:
    """Fixed random projection standing in for a pretrained image encoder."""

    def __init__(self, seed, d_raw, d_feat):
        self.seed = int(seed)
        self.d_raw = int(d_raw)
        self.d_feat = int(d_feat)
        rng = SeededRng(self.seed).stream("backbone")
        proj = rng.normal(0.0, 1.0 / np.sqrt(self.d_raw), size=(self.d_raw, self.d_feat))
        proj.flags.writeable = False
        self.projection = proj

    def __call__(self, x_raw):
        x = np.asarray(x_raw, dtype=np.float64)
        if x.shape[-1] != self.d_raw:
            raise ValueError(f"backbone expects {self.d_raw} raw features, got {x.shape[-1]}")
        return x @ self.projection


@dataclass
class LoraAdapter:
    A: np.ndarray
    B: np.ndarray

    @classmethod
    def fresh(cls, d_feat, rank, rng):
        """Zero ``B`` so the adapter starts as an exact identity on the feature."""
        if rank < 1:
            raise ValueError("adapter rank must be >= 1")
        A = rng.normal(0.0, 1.0 / np.sqrt(rank), size=(rank, d_feat))
        return cls(A=A, B=np.zeros((d_feat, rank)))

    @property
    def rank(self):
        return self.A.shape[0]

    def params(self):
        return {"A": self.A, "B": self.B}

    def copy(self):
        return LoraAdapter(self.A.copy(), self.B.copy())


@dataclass
class ClassifierHead:
    W: np.ndarray
    b: np.ndarray

    @classmethod
    def zeros(cls, d_feat):
        return cls(W=np.zeros((2, d_feat)), b=np.zeros(2))

    def params(self):
        return {"W": self.W, "b": self.b}


@dataclass
class Detector:
    """Backbone + shared head + the registry of per-scene experts (indexed by expert id)."""

    backbone: FrozenBackbone
    head: ClassifierHead
    rank: int
    experts: list = field(default_factory=list)

    @classmethod
    def create(cls, seed, d_raw, d_feat, rank):
        return cls(FrozenBackbone(seed, d_raw, d_feat), ClassifierHead.zeros(d_feat), int(rank))

    def add_expert(self, rng):
        self.experts.append(LoraAdapter.fresh(self.backbone.d_feat, self.rank, rng))
        return len(self.experts) - 1

    def params(self, expert_id):
        return {**self.experts[expert_id].params(), **self.head.params()}


@dataclass(frozen=True)
class LossBreakdown:
    contrastive: float
    ce: float
    total: float
    lam: float


@functools.lru_cache(maxsize=4096)
def _prompt_vector(text, d_feat):
    seed = int.from_bytes(hashlib.sha256(text.encode("utf-8")).digest()[:8], "little")
    u = np.random.Generator(np.random.PCG64(seed)).standard_normal(d_feat)
    u /= np.linalg.norm(u)
    u.flags.writeable = False
    return u


def prompt_embedding(text, d_feat):
    """Unit vector that depends only on ``text`` (frozen text-encoder stand-in)."""
    return _prompt_vector(str(text), int(d_feat))


def adapt(H, adapter):
    """Return ``(V, Acts)`` with ``V = H + H A^T B^T`` and ``Acts = H A^T``."""
    H = np.asarray(H, dtype=np.float64)
    if H.shape[-1] != adapter.A.shape[1]:
        raise ValueError(f"feature width {H.shape[-1]} != adapter width {adapter.A.shape[1]}")
    acts = H @ adapter.A.T
    return H + acts @ adapter.B.T, acts


def logits_of(V, head):
    if V.shape[-1] != head.W.shape[1]:
        raise ValueError("head width does not match feature width")
    return V @ head.W.T + head.b


def predict_label(logits):
    # argmax takes the first maximum, so equal logits give class 0 (real)
    return np.argmax(np.asarray(logits), axis=-1)


def forward(x_raw, expert, backbone, head):
    """Logits and adapted feature ``v`` for one raw input (or a batch of them)."""
    V, _ = adapt(backbone(x_raw), expert)
    return logits_of(V, head), V


def contrastive_loss(V, U):
    """Symmetric InfoNCE between image features ``V`` and prompt features ``U`` (row i pairs with row i)."""
    V = np.atleast_2d(np.asarray(V, dtype=np.float64))
    U = np.atleast_2d(np.asarray(U, dtype=np.float64))
    if V.shape[0] == 0:
        raise ValueError("contrastive loss needs a nonempty batch")
    if V.shape != U.shape:
        raise ValueError(f"feature/prompt batch mismatch {V.shape} vs {U.shape}")
    S = V @ U.T
    v_to_u = -np.mean(np.diag(log_softmax(S, axis=1)))
    u_to_v = -np.mean(np.diag(log_softmax(S.T, axis=1)))
    return float((v_to_u + u_to_v) / 2)


def ce_loss(logits, y):
    """Cross-entropy ``-log softmax(logits)[y]``; batches are averaged."""
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim == 1:
        return float(-log_softmax(logits)[int(y)])
    y = np.asarray(y, dtype=np.int64)
    return float(-np.mean(log_softmax(logits, axis=1)[np.arange(len(y)), y]))


def total_loss(H, y, U, adapter, head, lam=1.0):
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    V, _ = adapt(H, adapter)
    c = contrastive_loss(V, U)
    e = ce_loss(logits_of(V, head), y)
    return LossBreakdown(contrastive=c, ce=e, total=c + lam * e, lam=float(lam))


def gradients(H, y, U, adapter, head, lam=1.0):
    """Loss breakdown and exact gradients of the total loss for blocks A, B, W, b."""
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    H = np.atleast_2d(np.asarray(H, dtype=np.float64))
    U = np.atleast_2d(np.asarray(U, dtype=np.float64))
    y = np.asarray(y, dtype=np.int64)
    n = H.shape[0]
    V, acts = adapt(H, adapter)
    Z = logits_of(V, head)

    # cross-entropy part: dL/dZ = lam/n (softmax - onehot)
    P = softmax(Z, axis=1)
    onehot = np.zeros_like(P)
    onehot[np.arange(n), y] = 1.0
    dZ = lam * (P - onehot) / n
    ce = float(-np.mean(log_softmax(Z, axis=1)[np.arange(n), y]))

    # contrastive part on S = V U^T, both directions averaged
    S = V @ U.T
    eye = np.eye(n)
    dS = 0.5 * ((softmax(S, axis=1) - eye) + (softmax(S.T, axis=1) - eye).T) / n
    con = float(
        (-np.mean(np.diag(log_softmax(S, axis=1))) - np.mean(np.diag(log_softmax(S.T, axis=1)))) / 2
    )

    dV = dS @ U + dZ @ head.W
    dacts = dV @ adapter.B
    grads = {
        "A": dacts.T @ H,
        "B": dV.T @ acts,
        "W": dZ.T @ V,
        "b": dZ.sum(axis=0),
    }
    return LossBreakdown(contrastive=con, ce=ce, total=con + lam * ce, lam=float(lam)), grads


def loglik_gradients(H, y, adapter, head):
    """Per-sample gradients of ``log p(y | x)``; every block gets a leading sample axis."""
    H = np.atleast_2d(np.asarray(H, dtype=np.float64))
    y = np.asarray(y, dtype=np.int64)
    n = H.shape[0]
    V, acts = adapt(H, adapter)
    P = softmax(logits_of(V, head), axis=1)
    dZ = -P
    dZ[np.arange(n), y] += 1.0
    dV = dZ @ head.W
    dacts = dV @ adapter.B
    return {
        "A": np.einsum("nr,nd->nrd", dacts, H),
        "B": np.einsum("nd,nr->ndr", dV, acts),
        "W": np.einsum("nk,nd->nkd", dZ, V),
        "b": dZ,
    }


class SGDMomentum:
    """Heavy-ball SGD: ``buf = momentum * buf + grad; param -= lr * buf``.

    Buffers are keyed by the caller so that adapters and the shared head keep
    separate histories. ``reset`` clears all of them.
    """

    def __init__(self, lr=0.01, momentum=0.9):
        self.lr = float(lr)
        self.momentum = float(momentum)
        self._buf = {}

    def reset(self):
        self._buf.clear()

    def step(self, key, param, grad):
        buf = self._buf.get(key)
        buf = grad.copy() if buf is None else self.momentum * buf + grad
        self._buf[key] = buf
        param -= self.lr * buf
