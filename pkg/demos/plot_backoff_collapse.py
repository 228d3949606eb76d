"""
Per-task jobs and back-off
==========================

One pod per task.  Pods that find the cluster full wait out an exponential
back-off, and the cluster idles while they do.
"""

import os

from kubewf import experiments, run
from kubewf.metrics import backoff_pending_during, export, mean_running, stall_intervals

os.makedirs("demo-out", exist_ok=True)
res = run(experiments.job_scenario(3200, seed=1).to_sim_config())
print("makespan %.0f s" % (res.makespan_ms / 1000))
print("mean running tasks %.1f of %d slots" % (mean_running(res.trace, 0, res.makespan_ms), res.slot_capacity))

# intervals with fewer than 7 running tasks (10 % of the cluster) for a minute or more
for a, b in stall_intervals(res.trace, 60_000, below=7):
    waiting = backoff_pending_during(res.trace, a, b, 4)
    print("%6.0f-%6.0f s  %d pods stuck after 4+ failed placements" % (a / 1000, b / 1000, len(waiting)))

export(res, "gantt-image", "demo-out/job-gantt.svg")
