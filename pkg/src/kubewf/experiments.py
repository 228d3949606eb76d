"""Ready-made scenarios for the three execution models on a Montage workload."""

from __future__ import annotations

from .autoscaler import ScalerConfig
from .cluster import ClusterConfig
from .execmodels import ExecutionModelConfig, PoolSpec
from .scenario import Scenario
from .workflow import MONTAGE_PARALLEL_TYPES

# grid searched for the best clustered run: batch sizes 5 and 20, 3 s timeout
CLUSTER_GRID = {"size": (5, 20), "timeout_ms": (3000,)}

# HPA default scale-up behaviour: at most max(4 pods, +100 %) per tick
HPA_SCALE_UP = {"scale_up_pods": 4, "scale_up_percent": 100}


def _montage(n_inputs: int) -> dict:
    return {"montage": {"n_inputs": n_inputs}}


def job_scenario(n_inputs: int = 3200, seed: int = 1, workflow: dict | None = None) -> Scenario:
    return Scenario(f"job-n{n_inputs}-s{seed}", workflow or _montage(n_inputs), seed, ClusterConfig())


def clustered_scenario(
    size: int,
    timeout_ms: int = 3000,
    n_inputs: int = 3200,
    seed: int = 1,
    types=MONTAGE_PARALLEL_TYPES,
    workflow: dict | None = None,
) -> Scenario:
    from .execmodels import ClusteringRule

    model = ExecutionModelConfig(clustering=[ClusteringRule(tuple(types), size, timeout_ms)])
    return Scenario(
        f"clustered-{size}x{timeout_ms}-n{n_inputs}-s{seed}", workflow or _montage(n_inputs), seed, ClusterConfig(), model
    )


def hybrid_pool_scenario(
    n_inputs: int = 3200, seed: int = 1, types=MONTAGE_PARALLEL_TYPES, workflow: dict | None = None
) -> Scenario:
    """Worker pools for the parallel stages, plain jobs for everything else."""
    model = ExecutionModelConfig(pools=[PoolSpec(t) for t in types])
    return Scenario(
        f"hybrid-pools-n{n_inputs}-s{seed}",
        workflow or _montage(n_inputs),
        seed,
        ClusterConfig(),
        model,
        ScalerConfig(**HPA_SCALE_UP),
    )


def clustered_grid(n_inputs: int = 3200, seed: int = 1, grid: dict | None = None, workflow: dict | None = None) -> list[Scenario]:
    grid = grid or CLUSTER_GRID
    return [
        clustered_scenario(s, t, n_inputs, seed, workflow=workflow)
        for s in grid["size"]
        for t in grid["timeout_ms"]
    ]


def with_grid_point(base: Scenario, size: int, timeout_ms: int) -> Scenario:
    """Copy of ``base`` with every clustering rule set to ``size``/``timeout_ms``."""
    from dataclasses import replace

    from .execmodels import ClusteringRule

    if not base.model.clustering:
        raise ValueError(f"scenario {base.name!r} has no clustering rules to sweep")
    rules = [ClusteringRule(r.match_task, size, timeout_ms) for r in base.model.clustering]
    model = replace(base.model, clustering=rules)
    return replace(base, name=f"{base.name}-{size}x{timeout_ms}", model=model)
