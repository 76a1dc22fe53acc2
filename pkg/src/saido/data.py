"""Synthetic continual detection tasks and feature-file ingestion.

Real samples of scene ``s`` are drawn around the scene centroid; fake samples
around the same centroid displaced by the task's forgery signature
``fake_scale * fake_shift``. Real centroids are shared by all tasks, so only
the fake distribution changes from task to task.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .numcore import SeededRng


@dataclass(frozen=True)
class LabeledSample:
    features: np.ndarray
    label: int
    scene: str
    task: str


@dataclass
class SampleSet:
    X: np.ndarray
    y: np.ndarray
    scenes: np.ndarray
    tasks: np.ndarray

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        self.scenes = np.asarray(self.scenes, dtype=object)
        self.tasks = np.asarray(self.tasks, dtype=object)
        n = len(self.y)
        if self.X.ndim != 2 or self.X.shape[0] != n or len(self.scenes) != n or len(self.tasks) != n:
            raise ValueError("sample set columns have inconsistent lengths")

    def __len__(self):
        return len(self.y)

    def __getitem__(self, i):
        return LabeledSample(self.X[i], int(self.y[i]), self.scenes[i], self.tasks[i])

    def subset(self, idx):
        return SampleSet(self.X[idx], self.y[idx], self.scenes[idx], self.tasks[idx])

    def equals(self, other):
        return (
            self.X.shape == other.X.shape
            and np.array_equal(self.X, other.X)
            and np.array_equal(self.y, other.y)
            and list(self.scenes) == list(other.scenes)
            and list(self.tasks) == list(other.tasks)
        )

    @classmethod
    def concat(cls, sets):
        return cls(
            np.concatenate([s.X for s in sets]),
            np.concatenate([s.y for s in sets]),
            np.concatenate([s.scenes for s in sets]),
            np.concatenate([s.tasks for s in sets]),
        )


@dataclass(frozen=True)
class SceneSpec:
    name: str
    centroid: tuple
    std: float


@dataclass(frozen=True)
class TaskSpec:
    name: str
    n_train: int
    n_test: int
    fake_shift: tuple
    fake_scale: float
    scenes: tuple
    seed: int

    def validate(self):
        if not self.name or "," in self.name:
            raise ValueError(f"invalid task name {self.name!r}")
        if not self.scenes:
            raise ValueError(f"task {self.name}: no scenes")
        d = len(self.fake_shift)
        if min(self.n_train, self.n_test) < 2:
            raise ValueError(f"task {self.name}: n_train and n_test must be >= 2")
        if self.n_train < 2 * len(self.scenes):
            raise ValueError(f"task {self.name}: n_train too small to cover every scene in both classes")
        for s in self.scenes:
            if not s.name or "," in s.name:
                raise ValueError(f"invalid scene token {s.name!r}")
            if len(s.centroid) != d:
                raise ValueError(f"task {self.name}: scene {s.name} centroid has wrong length")
            if not s.std > 0:
                raise ValueError(f"task {self.name}: scene {s.name} std must be > 0")
        if len({s.name for s in self.scenes}) != len(self.scenes):
            raise ValueError(f"task {self.name}: duplicate scene tokens")

    @property
    def d_raw(self):
        return len(self.fake_shift)

    def to_dict(self):
        return {
            "name": self.name,
            "n_train": self.n_train,
            "n_test": self.n_test,
            "fake_shift": [float(v) for v in self.fake_shift],
            "fake_scale": float(self.fake_scale),
            "scenes": [
                {"name": s.name, "centroid": [float(v) for v in s.centroid], "std": float(s.std)}
                for s in self.scenes
            ],
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d):
        expected = {"name", "n_train", "n_test", "fake_shift", "fake_scale", "scenes", "seed"}
        if set(d) != expected:
            raise ValueError(f"task spec keys {sorted(d)} != {sorted(expected)}")
        scenes = []
        for s in d["scenes"]:
            if set(s) != {"name", "centroid", "std"}:
                raise ValueError(f"scene spec keys {sorted(s)} != ['centroid', 'name', 'std']")
            scenes.append(SceneSpec(str(s["name"]), tuple(float(v) for v in s["centroid"]), float(s["std"])))
        spec = cls(
            name=str(d["name"]),
            n_train=int(d["n_train"]),
            n_test=int(d["n_test"]),
            fake_shift=tuple(float(v) for v in d["fake_shift"]),
            fake_scale=float(d["fake_scale"]),
            scenes=tuple(scenes),
            seed=int(d["seed"]),
        )
        spec.validate()
        return spec


@dataclass(frozen=True)
class ProtocolSpec:
    tasks: tuple
    heldout: tuple = field(default=())

    def validate(self):
        names = [t.name for t in self.tasks] + [t.name for t in self.heldout]
        if len(set(names)) != len(names):
            raise ValueError("task names must be unique across the protocol")
        if not self.tasks:
            raise ValueError("protocol has no tasks")
        dims = {t.d_raw for t in self.tasks + self.heldout}
        if len(dims) != 1:
            raise ValueError("all tasks must share one raw feature width")
        for t in self.tasks + self.heldout:
            t.validate()

    def to_dict(self):
        return {"tasks": [t.to_dict() for t in self.tasks], "heldout": [t.to_dict() for t in self.heldout]}

    @classmethod
    def from_dict(cls, d):
        if not set(d) <= {"tasks", "heldout"} or "tasks" not in d:
            raise ValueError("protocol must have 'tasks' and optionally 'heldout'")
        p = cls(
            tuple(TaskSpec.from_dict(t) for t in d["tasks"]),
            tuple(TaskSpec.from_dict(t) for t in d.get("heldout", [])),
        )
        p.validate()
        return p


def _draw_split(spec, n, rng):
    n_real = math.ceil(n / 2)
    labels = np.array([0] * n_real + [1] * (n - n_real))
    # round-robin scene assignment inside each class so both classes cover every scene
    scene_idx = np.concatenate([np.arange(n_real), np.arange(n - n_real)]) % len(spec.scenes)
    centroids = np.array([s.centroid for s in spec.scenes], dtype=np.float64)
    stds = np.array([s.std for s in spec.scenes], dtype=np.float64)
    shift = spec.fake_scale * np.asarray(spec.fake_shift, dtype=np.float64)
    noise = rng.standard_normal((n, spec.d_raw))
    X = centroids[scene_idx] + stds[scene_idx, None] * noise + labels[:, None] * shift
    order = rng.permutation(n)
    names = np.array([s.name for s in spec.scenes], dtype=object)
    return SampleSet(X[order], labels[order], names[scene_idx][order], np.full(n, spec.name, dtype=object))


def generate_task(spec):
    """Deterministic ``(train, test)`` sample sets for ``spec``; the splits use separate streams."""
    spec.validate()
    rng = SeededRng(spec.seed)
    return (
        _draw_split(spec, spec.n_train, rng.stream(f"task/{spec.name}/train")),
        _draw_split(spec, spec.n_test, rng.stream(f"task/{spec.name}/test")),
    )


def perturb_features(samples, noise_std, seed):
    """Add i.i.d. Gaussian noise to features; labels, scenes and tasks are kept."""
    if noise_std < 0:
        raise ValueError("noise_std must be >= 0")
    if noise_std == 0:
        return SampleSet(samples.X.copy(), samples.y.copy(), samples.scenes.copy(), samples.tasks.copy())
    noise = SeededRng(seed).stream("perturb").normal(0.0, noise_std, size=samples.X.shape)
    return SampleSet(samples.X + noise, samples.y.copy(), samples.scenes.copy(), samples.tasks.copy())


# Feature CSV: header "label,scene,task,f0,...,f{d-1}", one sample per row.

def write_feature_file(samples, path):
    d = samples.X.shape[1]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["label", "scene", "task"] + [f"f{i}" for i in range(d)])
        for x, y, s, t in zip(samples.X, samples.y, samples.scenes, samples.tasks):
            w.writerow([int(y), s, t] + [repr(float(v)) for v in x])


def load_feature_file(path):
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: line 1: missing header")
    header = rows[0]
    if header[:3] != ["label", "scene", "task"] or len(header) < 4:
        raise ValueError(f"{path}: line 1: header must start with label,scene,task followed by f0..")
    d = len(header) - 3
    if header[3:] != [f"f{i}" for i in range(d)]:
        raise ValueError(f"{path}: line 1: feature columns must be named f0..f{d - 1}")
    X, y, scenes, tasks = [], [], [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != d + 3:
            raise ValueError(f"{path}: line {lineno}: expected {d + 3} fields, got {len(row)}")
        if row[0] not in ("0", "1"):
            raise ValueError(f"{path}: line {lineno}: label must be 0 or 1, got {row[0]!r}")
        try:
            feats = [float(v) for v in row[3:]]
        except ValueError:
            raise ValueError(f"{path}: line {lineno}: non-numeric feature") from None
        if not all(math.isfinite(v) for v in feats):
            raise ValueError(f"{path}: line {lineno}: non-finite feature")
        y.append(int(row[0]))
        scenes.append(row[1])
        tasks.append(row[2])
        X.append(feats)
    return SampleSet(np.array(X, dtype=np.float64).reshape(len(y), d), y, scenes, tasks)
