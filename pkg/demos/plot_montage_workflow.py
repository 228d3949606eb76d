"""
A Montage-shaped workload
=========================

Generate the 16 000-task DAG and look at how its parallel stages overlap.
"""

from kubewf import MontageParams, generate_montage
from kubewf.workflow import critical_path_ms, ready_tasks

dag = generate_montage(MontageParams(n_inputs=3200, seed=1))
print(len(dag), "tasks,", dag.edge_count(), "edges")
print(dag.type_counts())

# two finished projections already release a difference fit
done = {"mProject_0000", "mProject_0001"}
print(sorted(t for t in ready_tasks(dag, done) if t.startswith("mDiffFit")))

# no execution model can beat the longest chain of runtimes
print("critical path: %.0f s" % (critical_path_ms(dag) / 1000))
