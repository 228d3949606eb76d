from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import independent, one_node
from kubewf.autoscaler import (
    PoolMetrics,
    ScaleDownStabilizer,
    ScalerConfig,
    ScalingPlan,
    apportion,
    largest_remainder,
    desired_replicas,
    plan_scaling,
)
from kubewf.execmodels import ExecutionModelConfig, PoolSpec
from kubewf.simulator import SimConfig, run


def pm(pool, q, busy=0, cur=0, lo=0, hi=None):
    return PoolMetrics(pool, q, busy, cur, lo, hi)


class TestDesired:
    def test_17_51(self):
        assert desired_replicas([pm("A", 100), pm("B", 300)], 68) == {"A": 17, "B": 51}

    def test_demand_bounded(self):
        assert desired_replicas([pm("A", 10)], 68) == {"A": 10}

    def test_scale_to_zero(self):
        assert desired_replicas([pm("A", 0, 0, 5)], 68) == {"A": 0}

    def test_demand_counts_busy(self):
        assert desired_replicas([pm("A", 3, busy=4, cur=4)], 68) == {"A": 7}

    def test_min_one_for_nonzero_demand(self):
        out = desired_replicas([pm("A", 1), pm("B", 1000)], 10)
        assert out == {"A": 1, "B": 9}

    def test_clamps(self):
        assert desired_replicas([pm("A", 0, lo=2)], 68) == {"A": 2}
        assert desired_replicas([pm("A", 50, hi=4)], 68) == {"A": 4}

    def test_no_slots(self):
        assert desired_replicas([pm("A", 5)], 0) == {"A": 1}

    def test_remainder_ties_by_pool_id(self):
        assert sum(apportion({"a": 5, "b": 5, "c": 5}, 10).values()) == 10
        assert apportion({"b": 5, "a": 5}, 5) == {"a": 3, "b": 2}

    def test_negative_metrics_rejected(self):
        with pytest.raises(ValueError):
            PoolMetrics("a", -1, 0, 0)


demand_vectors = st.lists(st.integers(0, 5000), min_size=1, max_size=6)


def _share_error(alloc, demands, slots):
    total = sum(demands.values())
    return {p: abs(Fraction(alloc[p], slots) - Fraction(d, total)) for p, d in demands.items()}


@given(demand_vectors, st.integers(1, 300))
@settings(max_examples=300, deadline=None)
def test_largest_remainder_bound(demands, slots):
    d = {f"p{i}": v for i, v in enumerate(demands)}
    if not sum(demands):
        return
    out = largest_remainder(d, slots)
    assert sum(out.values()) == slots
    assert all(e < Fraction(1, slots) for e in _share_error(out, d, slots).values())


@given(demand_vectors, st.integers(1, 300))
@settings(max_examples=300, deadline=None)
def test_apportion_properties(demands, slots):
    d = {f"p{i}": v for i, v in enumerate(demands)}
    out = apportion(d, slots)
    total = sum(demands)
    if total <= slots:
        assert out == d
        return
    nonzero = sum(1 for v in demands if v)
    assert sum(out.values()) == max(slots, nonzero)
    for p, v in d.items():
        assert (out[p] >= 1) if v else (out[p] == 0)
    # each forced minimum moves one slot, so the error grows by at most 1/S per transfer
    lr = largest_remainder(d, slots)
    transfers = sum(1 for p, v in d.items() if v and lr[p] == 0)
    for p, err in _share_error(out, d, slots).items():
        assert err <= Fraction(1 + transfers, slots)
        if not transfers:
            assert err < Fraction(1, slots)


def test_min_one_can_break_the_share_bound():
    # three pools on three slots: every pool must get one
    out = apportion({"a": 1, "b": 1, "c": 5}, 3)
    assert out == {"a": 1, "b": 1, "c": 1}
    assert abs(Fraction(1, 3) - Fraction(5, 7)) > Fraction(1, 3)


class TestStabilizer:
    def test_short_dip_ignored(self):
        s = ScaleDownStabilizer(60_000)
        recs = [s.recommend(t, tgt) for t, tgt in [(0, 10), (15_000, 2), (30_000, 2), (45_000, 10)]]
        assert recs == [10, 10, 10, 10]

    def test_sustained_drop(self):
        s = ScaleDownStabilizer(60_000)
        for t in range(0, 75_001, 15_000):
            r = s.recommend(t, 10 if t == 0 else 2)
        assert r == 2


class TestPlan:
    def test_scale_up(self):
        assert plan_scaling(0, 10, 0, 0, 0, 10).submit == 10

    def test_idle_then_busy(self):
        plan = plan_scaling(current=10, target=7, pending=0, idle=2, busy=8, stabilized_target=7)
        assert (plan.remove_idle, plan.drain_busy, plan.cancel_pending) == (2, 1, 0)

    def test_cancel_pending_first(self):
        plan = plan_scaling(current=5, target=1, pending=2, idle=2, busy=1, stabilized_target=1)
        assert (plan.cancel_pending, plan.remove_idle, plan.drain_busy) == (2, 2, 0)

    def test_held_by_window(self):
        assert plan_scaling(10, 2, 0, 5, 5, 10) == ScalingPlan(effective_target=10)


def test_scale_up_ceiling():
    cfg = ScalerConfig(scale_up_pods=4, scale_up_percent=100)
    assert [cfg.scale_up_ceiling(c) for c in (0, 2, 4, 10)] == [4, 6, 8, 20]
    assert ScalerConfig().scale_up_ceiling(3) is None
    with pytest.raises(ValueError):
        ScalerConfig(interval_ms=0)


class TestTicks:
    def _run(self, dag, **scaler):
        model = ExecutionModelConfig(default=None, pools=[PoolSpec("x")])
        return run(SimConfig("p", dag, one_node(node_count=3), model, ScalerConfig(**scaler)))

    def test_no_pools_no_ticks(self):
        res = run(SimConfig("j", independent(1000), one_node()))
        assert not any(e.kind == "ScaleDecision" for e in res.trace)

    def test_first_tick_submits_for_queue(self):
        res = self._run(independent(*[3000] * 10, task_type="x"))
        first = [e for e in res.trace if e.time_ms == 0 and e.kind == "PodSubmitted"]
        assert len(first) == 10
        dec = next(e for e in res.trace if e.kind == "ScaleDecision")
        assert "target=10" in dec.detail

    def test_capacity_limits_target(self):
        res = self._run(independent(*[3000] * 20, task_type="x"))
        dec = next(e for e in res.trace if e.kind == "ScaleDecision")
        assert "slots=12 target=12" in dec.detail

    def test_idle_pool_reaches_zero(self):
        res = self._run(independent(1000, task_type="x"))
        assert sum(e.kind == "PodTerminated" for e in res.trace) == 1
