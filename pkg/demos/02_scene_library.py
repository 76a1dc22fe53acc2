"""
Growing a scene library
=======================

Scenes are recognised by distance to running-mean prototypes. A feature
farther than ``tau`` from every prototype opens a new scene, and with it a
fresh adapter expert.
"""

import numpy as np

from saido.benchmarks import stabilization_stream
from saido.scene import SceneLibrary, assign_and_update, identify

feats, truth, tau = stabilization_stream(seed=3)
print(f"{len(feats)} samples from {len(set(truth))} clusters, tau = {tau:.2f}")

lib = SceneLibrary(novelty_tau=tau)
experts = []


def new_expert():
    # stand-in for Detector.add_expert: just hand out ids
    experts.append(len(experts))
    return experts[-1]


sizes = []
for x in feats:
    assign_and_update(x, lib, new_expert)
    sizes.append(len(lib))

# when did each scene appear?
births = [int(np.argmax(np.array(sizes) > k)) for k in range(len(lib))]
print("scenes created at samples", births, "-> final size", len(lib))
for s in lib.scenes:
    print(f"  {s.name:<8} count={s.count:<5} expert={s.expert_id}")

# the confidence vector has one extra slot for "none of these"
conf = identify(feats[0], lib)
print("p for the first sample:", np.round(conf.p, 4), "argmax", conf.argmax_index)
far = 10 * np.ones_like(feats[0])
print("far-away feature is novel:", identify(far, lib).is_novel)
