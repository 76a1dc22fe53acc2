"""
Continual detection on the reference benchmark
===============================================

Four generator tasks arrive one after another. We train the same detector
twice, once with plain SGD fine-tuning and once with importance-guided
gradients, and compare how much each forgets.
"""

import logging

from saido.benchmarks import REFERENCE_TAU, reference_benchmark
from saido.harness import RunConfig, format_summary, run_protocol

logging.basicConfig(level=logging.WARNING)

# The protocol: two scenes at first, a third appears in task 3. Every
# forgery signature shares a generic component, so one detector *can*
# serve all four tasks; accuracy lost later is forgetting.
protocol = reference_benchmark(seed=1)
for t in protocol.tasks:
    print(f"{t.name:<8} scenes={[s.name for s in t.scenes]}  train={t.n_train} test={t.n_test}")

# novelty_tau has no universal default: it is a distance in feature units.
cfg = RunConfig(novelty_tau=REFERENCE_TAU, protocol=protocol, seed=1)

for idom_on in (False, True):
    cfg.idom_on = idom_on
    report = run_protocol(cfg)
    print()
    print("importance-guided" if idom_on else "plain SGD", f"({report.wall_clock:.1f} s)")
    print(format_summary(report))
