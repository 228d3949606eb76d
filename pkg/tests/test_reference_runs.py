"""Full-scale reference runs (16k tasks, seed 1): stall behavior per model."""

import pytest

from kubewf import experiments
from kubewf.metrics import backoff_pending_during, stall_intervals
from kubewf.simulator import run


@pytest.fixture(scope="module")
def pool_run():
    return run(experiments.hybrid_pool_scenario(3200, 1).to_sim_config())


def test_pool_gaps_are_scale_down_waits(pool_run):
    # idle workers keep their slots for one stabilization window, which can
    # hold back the next serial job pod; no back-off pathology is involved
    scaler = experiments.hybrid_pool_scenario(3200, 1).scaler
    limit = scaler.scale_down_stabilization_ms + scaler.interval_ms
    gaps = stall_intervals(pool_run.trace, 60_000)
    assert all(b - a < limit for a, b in gaps)
    assert all(not backoff_pending_during(pool_run.trace, a, b, 4) for a, b in gaps)
    assert not stall_intervals(pool_run.trace, limit)


def test_pool_summary_reports_full_cluster(pool_run):
    assert max(v for _, v in pool_run.utilization) == pool_run.slot_capacity == 68
