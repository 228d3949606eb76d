"""
Horizontal task clustering
==========================

Batches of same-type tasks run back to back in one pod.  Fewer pods means
fewer placement failures, but a batch that misses the cluster backs off
as a whole.
"""

from kubewf import experiments, run
from kubewf.metrics import stall_intervals

for sc in experiments.clustered_grid(3200, seed=1):
    res = run(sc.to_sim_config())
    pods = sum(e.kind == "PodScheduled" for e in res.trace)
    gaps = [(b - a) // 1000 for a, b in stall_intervals(res.trace, 60_000)]
    print(f"{sc.name}: makespan {res.makespan_ms / 1000:.0f} s, {pods} pods, idle gaps {gaps} s")
