"""
How much do results move between seeds?
=======================================

Single runs are noisy at this scale, so comparisons use medians over five
seeds. Each seed redraws both the benchmark and the model initialisation.
"""

import numpy as np

from saido.benchmarks import REFERENCE_TAU, reference_benchmark
from saido.harness import RunConfig, run_protocol

for idom_on in (False, True):
    finals = [
        run_protocol(RunConfig(novelty_tau=REFERENCE_TAU, protocol=reference_benchmark(s), seed=s,
                               idom_on=idom_on)).final
        for s in range(1, 6)
    ]
    print("importance-guided" if idom_on else "plain SGD")
    for k in ("aa", "af", "new_acc"):
        vals = np.array([f[k] for f in finals])
        print(f"  {k:<8} median {np.median(vals):.4f}   range {vals.min():.4f} .. {vals.max():.4f}")
