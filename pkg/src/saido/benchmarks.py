"""Ready-made synthetic protocols.

All builders are pure functions of their ``seed``: scene centroids and
forgery directions are drawn from one seeded stream, and every task gets its
own generation seed derived from it.

Forgery direction of task ``k`` is ``shared * common + sqrt(1 - shared**2) * own_k``
with ``common`` and every ``own_k`` orthonormal. The common part is a generic
trace all generators leave, so one detector can serve every task (joint
training reaches ~95% on the reference benchmark) and accuracy lost on old
tasks is forgetting rather than a capacity limit.
"""
from __future__ import annotations

import numpy as np

from .data import ProtocolSpec, SceneSpec, TaskSpec
from .numcore import SeededRng
from .scene import INITIAL_SCENES

GENERATORS = ("ADM", "GLIDE", "SAGAN", "ProGAN", "BigGAN", "Wukong", "Midjourney", "SD15", "VQDM")
OPEN_WORLD = ("DALLE3", "FLUX", "SDXL")

# novelty threshold (feature-space distance) suited to the builders' default geometry
REFERENCE_TAU = 1.5


def _centroids(rng, names, d, spread):
    return {n: tuple(spread * rng.standard_normal(d) / np.sqrt(d)) for n in names}


def _directions(rng, d, n, shared):
    basis = np.linalg.qr(rng.standard_normal((d, n + 1)))[0].T
    return [shared * basis[0] + np.sqrt(1 - shared**2) * basis[k + 1] for k in range(n)]


def _task(name, n_pairs, shift, scale, scenes, seed):
    return TaskSpec(name, 2 * n_pairs, n_pairs // 2, tuple(float(v) for v in shift), float(scale),
                    tuple(scenes), int(seed))


def reference_benchmark(seed, n_pairs=1000, d_raw=32, std=0.1, spread=4.0, scale=0.6, shared=0.7):
    """Four tasks, two scenes growing to three, 1k train / 250 test pairs each."""
    rng = SeededRng(seed).stream("benchmark/reference")
    cents = _centroids(rng, ("Animal", "Building", "Plant"), d_raw, spread)
    dirs = _directions(rng, d_raw, 4, shared)
    layout = [("Animal", "Building")] * 2 + [("Animal", "Building", "Plant")] * 2
    return ProtocolSpec(tuple(
        _task(GENERATORS[k], n_pairs, dirs[k], scale, [SceneSpec(n, cents[n], std) for n in layout[k]],
              1000 * seed + k)
        for k in range(4)
    ))


def scene_shift_benchmark(seed, n_pairs=1000, d_raw=32, std=0.1, spread=4.0, scale=0.6, shared=0.7):
    """Three well-separated scenes; each of the first three tasks lives in one of them.

    A single shared adapter is dragged from scene to scene, while scene
    experts each see one domain. The last task mixes all three.
    """
    rng = SeededRng(seed).stream("benchmark/scene-shift")
    names = ("Animal", "Building", "Plant")
    cents = _centroids(rng, names, d_raw, spread)
    dirs = _directions(rng, d_raw, 4, shared)
    layout = [("Animal",), ("Building",), ("Plant",), names]
    return ProtocolSpec(tuple(
        _task(GENERATORS[k], n_pairs, dirs[k], scale, [SceneSpec(n, cents[n], std) for n in layout[k]],
              2000 * seed + k)
        for k in range(4)
    ))


def protocol1_like(seed, n_pairs=1000, d_raw=32, std=0.1, spread=4.0, scale=0.6, shared=0.7):
    """Nine generator tasks over the eight initial scenes plus two newcomers.

    The first task contains all ten scenes, so a library preseeded with the
    initial vocabulary grows to ten during it. Later tasks each cover two
    thirds of the scenes. Three held-out generators over every scene form the
    open-world set.
    """
    rng = SeededRng(seed).stream("benchmark/protocol1")
    names = INITIAL_SCENES + ("Plant", "Clothing")
    cents = _centroids(rng, names, d_raw, spread)
    dirs = _directions(rng, d_raw, len(GENERATORS) + len(OPEN_WORLD), shared)
    tasks = []
    for k, gen in enumerate(GENERATORS):
        present = names if k == 0 else tuple(n for i, n in enumerate(names) if (i + k) % 3)
        tasks.append(_task(gen, n_pairs, dirs[k], scale, [SceneSpec(n, cents[n], std) for n in present],
                           3000 * seed + k))
    heldout = tuple(
        _task(gen, n_pairs, dirs[len(GENERATORS) + i], scale, [SceneSpec(n, cents[n], std) for n in names],
              3000 * seed + 100 + i)
        for i, gen in enumerate(OPEN_WORLD)
    )
    return ProtocolSpec(tuple(tasks), heldout)


def stabilization_stream(seed, n=2000, n_scenes=3, d=16, std=0.25, separation=8.0):
    """Samples from ``n_scenes`` fixed clusters in feature space, plus a novelty threshold.

    Centroids sit on a scaled simplex so every pair is ``separation`` apart
    (well above 4 std); ``tau`` lies between the within-cluster radius and
    the inter-centroid distance. Returns ``(features, cluster_ids, tau)``.
    """
    rng = SeededRng(seed).stream("benchmark/stabilization")
    basis = np.linalg.qr(rng.standard_normal((d, n_scenes)))[0].T
    cents = separation / np.sqrt(2) * basis
    ids = rng.integers(0, n_scenes, size=n)
    feats = cents[ids] + std * rng.standard_normal((n, d))
    tau = 0.5 * (std * np.sqrt(d) * 2 + separation)
    return feats, ids, tau
