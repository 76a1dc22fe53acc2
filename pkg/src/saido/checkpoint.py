"""Model checkpoints.

A checkpoint is a directory with two files:

``model.npz``
    numpy archive (no pickled objects). Keys::

        meta/backbone_seed, meta/d_raw, meta/d_feat, meta/rank   int64 scalars
        meta/scene_names        str array, scene name per expert id ("" if none)
        head/W, head/b
        expert/<id>/A, expert/<id>/B
        idom/<id>/tasks_seen, idom/<id>/M_bar/<block>,
        idom/<id>/I_hist/<c>/<block>, idom/<id>/g_ref/<block>
        idom/head/...           the same layout for the shared head's state

``scenes.tsv``
    the scene library table written by :func:`saido.scene.save_library`
    (absent when the run used a single expert).
"""
from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .idom import FAKE, REAL, ImportanceState
from .model import ClassifierHead, Detector, FrozenBackbone, LoraAdapter
from .scene import load_library, save_library


@dataclass
class TrainedSystem:
    detector: Detector
    library: object  # SceneLibrary, or None in single-expert mode
    states: list  # adapter ImportanceState per expert id
    head_state: object = None  # ImportanceState of the shared head


def _put_state(arrays, prefix, st):
    arrays[f"{prefix}/tasks_seen"] = np.int64(st.tasks_seen)
    for k in st.shapes:
        arrays[f"{prefix}/M_bar/{k}"] = st.M_bar[k]
        for c in (REAL, FAKE):
            arrays[f"{prefix}/I_hist/{c}/{k}"] = st.I_hist[c][k]
        if k in st.g_ref:
            arrays[f"{prefix}/g_ref/{k}"] = st.g_ref[k]


def _get_state(arrays, prefix, params):
    st = ImportanceState.for_params(params)
    st.tasks_seen = int(arrays[f"{prefix}/tasks_seen"])
    for k in st.shapes:
        st.M_bar[k] = arrays[f"{prefix}/M_bar/{k}"]
        for c in (REAL, FAKE):
            st.I_hist[c][k] = arrays[f"{prefix}/I_hist/{c}/{k}"]
        if f"{prefix}/g_ref/{k}" in arrays:
            st.g_ref[k] = arrays[f"{prefix}/g_ref/{k}"]
    return st


def save_checkpoint(system, path):
    os.makedirs(path, exist_ok=True)
    det = system.detector
    names = [""] * len(det.experts)
    if system.library is not None:
        for s in system.library.scenes:
            names[s.expert_id] = s.name
    arrays = {
        "meta/backbone_seed": np.int64(det.backbone.seed),
        "meta/d_raw": np.int64(det.backbone.d_raw),
        "meta/d_feat": np.int64(det.backbone.d_feat),
        "meta/rank": np.int64(det.rank),
        "meta/scene_names": np.array(names, dtype=str),
        "head/W": det.head.W,
        "head/b": det.head.b,
    }
    for i, ad in enumerate(det.experts):
        arrays[f"expert/{i}/A"] = ad.A
        arrays[f"expert/{i}/B"] = ad.B
    tagged = list(enumerate(system.states))
    if system.head_state is not None:
        tagged.append(("head", system.head_state))
    for tag, st in tagged:
        _put_state(arrays, f"idom/{tag}", st)
    np.savez(os.path.join(path, "model.npz"), **arrays)
    scenes_path = os.path.join(path, "scenes.tsv")
    if system.library is not None:
        save_library(system.library, scenes_path)
    elif os.path.exists(scenes_path):
        os.remove(scenes_path)


def load_checkpoint(path):
    with np.load(os.path.join(path, "model.npz"), allow_pickle=False) as z:
        arrays = {k: z[k] for k in z.files}
    backbone = FrozenBackbone(int(arrays["meta/backbone_seed"]), int(arrays["meta/d_raw"]), int(arrays["meta/d_feat"]))
    det = Detector(backbone, ClassifierHead(arrays["head/W"], arrays["head/b"]), int(arrays["meta/rank"]))
    n_experts = len(arrays["meta/scene_names"])
    for i in range(n_experts):
        det.experts.append(LoraAdapter(arrays[f"expert/{i}/A"], arrays[f"expert/{i}/B"]))
    states = [_get_state(arrays, f"idom/{i}", det.experts[i].params()) for i in range(n_experts)]
    head_state = _get_state(arrays, "idom/head", det.head.params()) if "idom/head/tasks_seen" in arrays else None
    scenes_path = os.path.join(path, "scenes.tsv")
    library = load_library(scenes_path) if os.path.exists(scenes_path) else None
    return TrainedSystem(det, library, states, head_state)
