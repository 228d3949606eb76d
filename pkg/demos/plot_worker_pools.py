"""
Auto-scaled worker pools
========================

Long-lived workers per task type pull from their own queue.  The scaler
divides the cluster among pools in proportion to queued plus running work.
"""

from kubewf import apportion, experiments, run
from kubewf.metrics import running_series

# the split the scaler would pick for two competing queues
print(apportion({"mProject": 100, "mDiffFit": 300}, 68))

res = run(experiments.hybrid_pool_scenario(3200, seed=1).to_sim_config())
print("makespan %.0f s, peak %d of %d slots" % (
    res.makespan_ms / 1000, max(v for _, v in running_series(res.trace)), res.slot_capacity))

decisions = [e for e in res.trace if e.kind == "ScaleDecision" and e.pool == "mDiffFit"]
for e in decisions[:6]:
    print("%5.0f s  %s" % (e.time_ms / 1000, e.detail))
