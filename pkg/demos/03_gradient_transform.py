"""
Inside the importance-guided update
===================================

One parameter block, two entries. Entry 0 is a core entry (important for
past tasks), entry 1 is free.
"""

import numpy as np

from saido.idom import control_factors, normalize_importance, project, scale_factor, transform_block

g = np.array([1.0, 0.0])  # current gradient
g_ref = np.array([1.0, 1.0])  # stored direction of old-task gradients
I_real = np.array([3.0, 0.0])  # accumulated importance for real images
I_fake = np.array([1.0, 0.0])  # ... and for fakes
core = np.array([1, 0])

g_p, g_o = project(g, g_ref)
print("parallel part  ", g_p)
print("orthogonal part", g_o)

q0, q1 = control_factors(I_real, I_fake)
print("q0, q1 per entry:", q0, q1)  # real-heavy entries lean on the old direction

u = scale_factor(normalize_importance(I_real + I_fake), e=1.0)
print("damping u:", u)

w = transform_block(g, g_ref, I_real, I_fake, core, e=1.0)
print("update w:", w)  # 0.5 * (0.75*0.5 + 0.25*0.5) = 0.25 on the core entry

# a free entry keeps its raw gradient untouched
w2 = transform_block(np.array([1.0, 2.0]), g_ref, I_real, I_fake, core, e=1.0)
print("free entry passes through:", w2[1] == 2.0)
