"""Queue-length driven replica planning for worker pools."""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping


@dataclass(frozen=True)
class PoolMetrics:
    pool: str
    queue_length: int
    busy_workers: int
    current_replicas: int
    min_replicas: int = 0
    max_replicas: int | None = None

    def __post_init__(self):
        if self.queue_length < 0 or self.busy_workers < 0:
            raise ValueError("queue length and busy workers must be >= 0")

    @property
    def demand(self) -> int:
        return self.queue_length + self.busy_workers


@dataclass(frozen=True)
class ScalerConfig:
    """Tick period, scale-down window and an optional per-tick scale-up cap.

    With ``scale_up_pods``/``scale_up_percent`` set, one tick may grow a pool
    to at most ``current + max(scale_up_pods, current * scale_up_percent / 100)``
    replicas, like the HPA default behavior (4 pods or 100 %).
    """

    interval_ms: int = 15_000
    scale_down_stabilization_ms: int = 60_000
    scale_up_pods: int | None = None
    scale_up_percent: int | None = None

    def __post_init__(self):
        if self.interval_ms <= 0:
            raise ValueError("interval_ms must be > 0")
        if self.scale_down_stabilization_ms < 0:
            raise ValueError("stabilization must be >= 0")
        if (self.scale_up_pods is not None and self.scale_up_pods < 1) or (
            self.scale_up_percent is not None and self.scale_up_percent < 1
        ):
            raise ValueError("scale-up limits must be >= 1")

    def scale_up_ceiling(self, current: int) -> int | None:
        if self.scale_up_pods is None and self.scale_up_percent is None:
            return None
        step = max(self.scale_up_pods or 0, current * (self.scale_up_percent or 0) // 100)
        return current + step


def largest_remainder(demands: Mapping[str, int], slots: int) -> dict[str, int]:
    """Hamilton apportionment of ``slots`` in proportion to ``demands``.

    Every pool gets the floor of its exact share; leftover slots go to the
    largest fractional remainders, ties broken by pool id.
    """
    total = sum(demands.values())
    if total == 0:
        return {p: 0 for p in demands}
    quota = {p: Fraction(slots * d, total) for p, d in demands.items()}
    alloc = {p: math.floor(q) for p, q in quota.items()}
    left = slots - sum(alloc.values())
    for p in sorted(quota, key=lambda p: (-(quota[p] - alloc[p]), p))[:left]:
        alloc[p] += 1
    return alloc


def apportion(demands: Mapping[str, int], slots: int) -> dict[str, int]:
    """Split ``slots`` among pools, at least one slot per pool with demand.

    Demands that fit are granted in full.  Otherwise the largest-remainder
    split is taken and a pool left at zero despite non-zero demand takes a
    slot from the pool holding the most above its exact share.
    """
    total = sum(demands.values())
    if total <= slots:
        return dict(demands)
    alloc = largest_remainder(demands, slots)
    for p in sorted(demands):
        if demands[p] > 0 and alloc[p] == 0:
            donors = [q for q in alloc if alloc[q] > 1]
            if donors:
                donor = max(donors, key=lambda q: (alloc[q] - Fraction(slots * demands[q], total), alloc[q], q))
                alloc[donor] -= 1
            alloc[p] = 1
    return alloc


def desired_replicas(metrics: list[PoolMetrics], slots: int) -> dict[str, int]:
    """Target replicas per pool for ``slots`` schedulable worker slots."""
    alloc = apportion({m.pool: m.demand for m in metrics}, max(slots, 0))
    out = {}
    for m in metrics:
        n = alloc[m.pool]
        n = max(n, m.min_replicas)
        if m.max_replicas is not None:
            n = min(n, m.max_replicas)
        out[m.pool] = n
    return out


@dataclass
class ScalingPlan:
    submit: int = 0
    cancel_pending: int = 0
    remove_idle: int = 0
    drain_busy: int = 0
    effective_target: int = 0


@dataclass
class ScaleDownStabilizer:
    """Scale down only to the highest recommendation seen inside the window."""

    window_ms: int
    history: deque = field(default_factory=deque)

    def recommend(self, now_ms: int, target: int) -> int:
        self.history.append((now_ms, target))
        while self.history and self.history[0][0] < now_ms - self.window_ms:
            self.history.popleft()
        return max(t for _, t in self.history)


def plan_scaling(current: int, target: int, pending: int, idle: int, busy: int, stabilized_target: int) -> ScalingPlan:
    """Translate a target into concrete pod actions for one pool.

    ``current`` counts live, non-draining workers (``pending + idle + busy``).
    Scale-up is immediate; scale-down uses ``stabilized_target`` and removes
    workers that never started first, then idle ones, then drains busy ones.
    """
    if target > current:
        return ScalingPlan(submit=target - current, effective_target=target)
    if stabilized_target >= current:
        return ScalingPlan(effective_target=current)
    excess = current - stabilized_target
    cancel = min(excess, pending)
    excess -= cancel
    remove = min(excess, idle)
    excess -= remove
    drain = min(excess, busy)
    return ScalingPlan(cancel_pending=cancel, remove_idle=remove, drain_busy=drain, effective_target=stabilized_target)
