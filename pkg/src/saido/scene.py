"""Scene library: nearest-prototype scene identification with a novelty slot, growth, and prompts."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .numcore import softmax

INITIAL_SCENES = ("Activity", "Animal", "Building", "Food", "Nature", "Object", "Person", "Vehicle")
LABEL_WORDS = ("real", "fake")


@dataclass
class SceneRecord:
    name: str
    prototype: np.ndarray
    count: int
    expert_id: int


@dataclass(frozen=True)
class SceneConfidence:
    p: np.ndarray
    argmax_index: int  # 1-based; len(p) is the novelty slot

    @property
    def is_novel(self):
        return self.argmax_index == len(self.p)


@dataclass
class SceneLibrary:
    """Grow-only, insertion-ordered set of scenes, each bound to one expert.

    Identification compares negative prototype distances against a fixed
    novelty logit ``-novelty_tau`` (all divided by ``temperature``).
    """

    novelty_tau: float
    temperature: float = 1.0
    scenes: list = field(default_factory=list)

    def __post_init__(self):
        if not self.novelty_tau > 0:
            raise ValueError("novelty_tau must be > 0")
        if not self.temperature > 0:
            raise ValueError("temperature must be > 0")

    def __len__(self):
        return len(self.scenes)

    @property
    def names(self):
        return [s.name for s in self.scenes]

    def index_of(self, name):
        for i, s in enumerate(self.scenes):
            if s.name == name:
                return i
        raise KeyError(name)


def identify(feature, lib):
    """Confidence over the ``N`` known scenes plus the novelty slot."""
    x = np.asarray(feature, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError("feature contains non-finite entries")
    if not lib.scenes:
        return SceneConfidence(p=np.ones(1), argmax_index=1)
    protos = np.stack([s.prototype for s in lib.scenes])
    dists = np.linalg.norm(protos - x, axis=1)
    logits = np.append(-dists, -lib.novelty_tau) / lib.temperature
    p = softmax(logits)
    # np.argmax returns the first maximum: ties go to the lowest index
    return SceneConfidence(p=p, argmax_index=int(np.argmax(logits)) + 1)


def nearest_known(feature, lib):
    """0-based index of the closest prototype, ignoring the novelty slot."""
    if not lib.scenes:
        raise ValueError("scene library is empty")
    protos = np.stack([s.prototype for s in lib.scenes])
    return int(np.argmin(np.linalg.norm(protos - np.asarray(feature, dtype=np.float64), axis=1)))


def register_scene(lib, name, feature, new_expert):
    """Append a scene whose prototype is ``feature``.

    ``new_expert`` is a zero-argument callable that allocates a fresh adapter
    and returns its id (see :meth:`saido.model.Detector.add_expert`); the
    caller owns the expert registry. Returns the 0-based
    ``(scene_index, expert_id)``.
    """
    if not name or any(c in name for c in "\t\n\r"):
        raise ValueError(f"invalid scene name {name!r}")
    if name in lib.names:
        raise ValueError(f"duplicate scene name {name!r}")
    proto = np.array(feature, dtype=np.float64)
    if not np.all(np.isfinite(proto)):
        raise ValueError("feature contains non-finite entries")
    expert_id = int(new_expert())
    if any(s.expert_id == expert_id for s in lib.scenes):
        raise ValueError(f"expert {expert_id} already bound to a scene")
    lib.scenes.append(SceneRecord(name=name, prototype=proto, count=1, expert_id=expert_id))
    return len(lib.scenes) - 1, expert_id


def absorb(record, feature):
    """Running-mean prototype update: ``(count * old + x) / (count + 1)``."""
    record.prototype = (record.count * record.prototype + np.asarray(feature, dtype=np.float64)) / (
        record.count + 1
    )
    record.count += 1


def assign_and_update(feature, lib, new_expert):
    """Route ``feature`` during training, growing the library on novelty.

    ``new_expert`` is only called when a scene is created.
    """
    conf = identify(feature, lib)
    if conf.is_novel:
        name = f"scene_{len(lib) + 1}"
        while name in lib.names:
            name += "_"
        return register_scene(lib, name, feature, new_expert)
    idx = conf.argmax_index - 1
    absorb(lib.scenes[idx], feature)
    return idx, lib.scenes[idx].expert_id


def route(feature, lib):
    """Read-only routing for evaluation: known argmax, else the nearest known scene."""
    conf = identify(feature, lib)
    idx = nearest_known(feature, lib) if conf.is_novel else conf.argmax_index - 1
    return idx, lib.scenes[idx].expert_id


def route_batch(features, lib):
    """Vectorised :func:`route`; returns expert ids for every row of ``features``."""
    F = np.atleast_2d(np.asarray(features, dtype=np.float64))
    if not lib.scenes:
        raise ValueError("scene library is empty")
    protos = np.stack([s.prototype for s in lib.scenes])
    # same arithmetic as identify(): norm of (prototype - feature) per scene
    dists = np.linalg.norm(protos[None, :, :] - F[:, None, :], axis=2)
    # the novelty slot is only chosen when it strictly beats every scene logit,
    # in which case the nearest scene is used anyway, so argmin covers both
    idx = np.argmin(dists, axis=1)
    experts = np.array([s.expert_id for s in lib.scenes])
    return experts[idx]


def compose_prompt(content, scene_name, label):
    if not scene_name:
        raise ValueError("scene name must be nonempty")
    return f"{content} | scene: {scene_name} | {LABEL_WORDS[int(label)]}"


# Persistence: a tab-separated text table. First line carries the library
# settings, then one line per scene: name, count, expert_id, prototype entries.
# Floats are written with repr(), which round-trips exactly.

def dumps_library(lib):
    lines = [f"#saido-scenes\tnovelty_tau={lib.novelty_tau!r}\ttemperature={lib.temperature!r}"]
    for s in lib.scenes:
        cells = [s.name, str(s.count), str(s.expert_id)] + [repr(float(v)) for v in s.prototype]
        lines.append("\t".join(cells))
    return "\n".join(lines) + "\n"


def loads_library(text):
    rows = text.splitlines()
    if not rows or not rows[0].startswith("#saido-scenes"):
        raise ValueError("not a scene library table (missing header)")
    settings = dict(kv.split("=", 1) for kv in rows[0].split("\t")[1:])
    lib = SceneLibrary(float(settings["novelty_tau"]), float(settings["temperature"]))
    for lineno, row in enumerate(rows[1:], start=2):
        cells = row.split("\t")
        if len(cells) < 4:
            raise ValueError(f"line {lineno}: expected name, count, expert_id and prototype entries")
        proto = np.array([float(c) for c in cells[3:]])
        lib.scenes.append(SceneRecord(cells[0], proto, int(cells[1]), int(cells[2])))
    return lib


def save_library(lib, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps_library(lib))


def load_library(path):
    with open(path, encoding="utf-8") as fh:
        return loads_library(fh.read())
