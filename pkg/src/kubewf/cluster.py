"""Request-based model of a Kubernetes data plane.

Pods pass an admission token bucket, then the scheduler places them on the
feasible node with the most free CPU left over.  Pods that do not fit go
Pending with an exponential back-off.  Back-off is a minimum wait: a Pending
pod is retried when resources are released after its back-off has elapsed,
or when its back-off expires if a release happened in the meantime.  It is
never polled.  All times are integer milliseconds.
"""

from __future__ import annotations

import enum
import heapq
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, NamedTuple


class ClusterError(RuntimeError):
    pass


class PodPhase(enum.Enum):
    SUBMITTED = "Submitted"
    PENDING = "Pending"
    CREATING = "Creating"
    RUNNING = "Running"
    SUCCEEDED = "Succeeded"
    TERMINATED = "Terminated"
    UNSCHEDULABLE = "Unschedulable"


@dataclass(frozen=True)
class NodeSpec:
    id: str
    cpu_capacity_millicores: int = 4000
    mem_capacity_mb: int = 16384

    def __post_init__(self):
        if self.cpu_capacity_millicores <= 0 or self.mem_capacity_mb <= 0:
            raise ValueError(f"node {self.id!r}: capacities must be > 0")


@dataclass(frozen=True)
class PodSpec:
    id: str
    cpu_request_millicores: int
    mem_request_mb: int
    creation_overhead_ms: int = 2000
    payload: Any = None
    pool: str | None = None

    def __post_init__(self):
        if self.cpu_request_millicores <= 0 or self.mem_request_mb <= 0:
            raise ValueError(f"pod {self.id!r}: requests must be > 0")
        if self.creation_overhead_ms < 0:
            raise ValueError(f"pod {self.id!r}: creation overhead must be >= 0")


@dataclass
class PodState:
    spec: PodSpec
    seq: int
    phase: PodPhase = PodPhase.SUBMITTED
    attempts: int = 0
    next_eligible_ms: int | None = None
    node: int | None = None
    admitted_ms: int | None = None
    # release epoch observed at the last failed placement
    fail_epoch: int = -1


@dataclass(frozen=True)
class BackoffPolicy:
    initial_ms: int = 5000
    factor: float = 2
    cap_ms: int = 300_000

    def __post_init__(self):
        if self.initial_ms <= 0 or self.factor < 1 or self.cap_ms < self.initial_ms:
            raise ValueError("back-off needs initial_ms > 0, factor >= 1, cap_ms >= initial_ms")

    def delay(self, attempts: int) -> int:
        if attempts < 1:
            raise ValueError("attempts must be >= 1")
        # grow step by step so huge attempt counts never overflow
        d = self.initial_ms
        for _ in range(attempts - 1):
            if d >= self.cap_ms:
                break
            d = d * self.factor
        return int(min(self.cap_ms, d))


def backoff_delay(attempts: int, policy: BackoffPolicy | None = None) -> int:
    return (policy or BackoffPolicy()).delay(attempts)


class AdmissionLimiter:
    """Token bucket expressed as a virtual scheduling clock (GCRA).

    ``burst`` pods pass immediately, after that one pod per
    ``1000 / rate_per_s`` ms.  A rate of 0 disables limiting.
    """

    def __init__(self, rate_per_s: float = 20, burst: int = 40):
        if rate_per_s < 0 or burst < 1:
            raise ValueError("admission needs rate_per_s >= 0 and burst >= 1")
        self.rate_per_s = rate_per_s
        self.burst = burst
        self._interval = Fraction(1000) / Fraction(rate_per_s).limit_denominator(10**6) if rate_per_s else Fraction(0)
        self._tolerance = (burst - 1) * self._interval
        self._tat = Fraction(0)

    def admit(self, now_ms: int) -> int:
        if not self._interval:
            return now_ms
        at = max(Fraction(now_ms), self._tat - self._tolerance)
        self._tat = max(self._tat, Fraction(now_ms)) + self._interval
        return math.ceil(at)


class Placement(NamedTuple):
    pod_id: str
    node: str | None
    next_eligible_ms: int | None = None
    unschedulable: bool = False


@dataclass
class ClusterConfig:
    node_count: int = 17
    cpu_m: int = 4000
    mem_mb: int = 16384
    backoff: BackoffPolicy = field(default_factory=BackoffPolicy)
    admission_rate_per_s: float = 20
    admission_burst: int = 40
    pod_overhead_ms: int = 2000

    def nodes(self) -> list[NodeSpec]:
        width = max(2, len(str(self.node_count - 1)))
        return [NodeSpec(f"node-{i:0{width}d}", self.cpu_m, self.mem_mb) for i in range(self.node_count)]

    def to_dict(self) -> dict:
        return {
            "nodes": {"count": self.node_count, "cpu_m": self.cpu_m, "mem_mb": self.mem_mb},
            "backoff": {
                "initial_ms": self.backoff.initial_ms,
                "factor": self.backoff.factor,
                "cap_ms": self.backoff.cap_ms,
            },
            "admission": {"rate_per_s": self.admission_rate_per_s, "burst": self.admission_burst},
            "pod_overhead_ms": self.pod_overhead_ms,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ClusterConfig":
        nodes = doc.get("nodes", {})
        backoff = doc.get("backoff", {})
        admission = doc.get("admission", {})
        return cls(
            node_count=nodes.get("count", 17),
            cpu_m=nodes.get("cpu_m", 4000),
            mem_mb=nodes.get("mem_mb", 16384),
            backoff=BackoffPolicy(**backoff),
            admission_rate_per_s=admission.get("rate_per_s", 20),
            admission_burst=admission.get("burst", 40),
            pod_overhead_ms=doc.get("pod_overhead_ms", 2000),
        )


class Cluster:
    """Mutable cluster state driven by the simulator's event loop."""

    def __init__(
        self,
        nodes: list[NodeSpec],
        backoff: BackoffPolicy | None = None,
        admission: AdmissionLimiter | None = None,
    ):
        if not nodes:
            raise ValueError("cluster needs at least one node")
        self.nodes = list(nodes)
        self.backoff = backoff or BackoffPolicy()
        self.admission = admission or AdmissionLimiter()
        self.pods: dict[str, PodState] = {}
        n = len(self.nodes)
        self.cpu_alloc = [0] * n
        self.mem_alloc = [0] * n
        # share of the allocation held by worker-pool pods
        self.pool_cpu_alloc = [0] * n
        self.pool_mem_alloc = [0] * n
        self._eligible: list[tuple[int, str]] = []
        # back-off elapsed, no release since the failure: wait for one
        self._parked: list[tuple[int, str]] = []
        self.release_epoch = 0
        self._seq = 0
        self.total_cpu = sum(nd.cpu_capacity_millicores for nd in self.nodes)
        self._max_cpu = max(nd.cpu_capacity_millicores for nd in self.nodes)
        self._max_mem = max(nd.mem_capacity_mb for nd in self.nodes)

    @classmethod
    def from_config(cls, cfg: ClusterConfig) -> "Cluster":
        return cls(cfg.nodes(), cfg.backoff, AdmissionLimiter(cfg.admission_rate_per_s, cfg.admission_burst))

    def submit_pod(self, spec: PodSpec, now_ms: int) -> int:
        """Register a pod; return the time it clears the admission limiter."""
        if spec.id in self.pods:
            raise ClusterError(f"duplicate pod id {spec.id!r}")
        self.pods[spec.id] = PodState(spec, self._seq)
        self._seq += 1
        return self.admission.admit(now_ms)

    def mark_eligible(self, pod_id: str, now_ms: int) -> None:
        """Queue a pod for the next scheduling pass (admitted or back-off over)."""
        pod = self.pods[pod_id]
        if pod.phase is PodPhase.SUBMITTED:
            pod.admitted_ms = now_ms
        elif pod.phase is PodPhase.PENDING:
            if pod.next_eligible_ms is not None and pod.next_eligible_ms > now_ms:
                raise ClusterError(f"pod {pod_id!r} still backing off until {pod.next_eligible_ms}")
        else:
            return
        heapq.heappush(self._eligible, (pod.seq, pod_id))

    def backoff_expired(self, pod_id: str, now_ms: int) -> bool:
        """Handle a back-off expiry; True if the pod is now queued for a pass."""
        pod = self.pods[pod_id]
        if pod.phase is not PodPhase.PENDING or pod.next_eligible_ms != now_ms:
            return False
        if self.release_epoch > pod.fail_epoch:
            self.mark_eligible(pod_id, now_ms)
            return True
        heapq.heappush(self._parked, (pod.seq, pod_id))
        return False

    def parked(self) -> list[str]:
        return [p for _, p in sorted(self._parked) if self.pods[p].phase is PodPhase.PENDING]

    def has_eligible(self) -> bool:
        return bool(self._eligible)

    def _fits(self, i: int, cpu: int, mem: int) -> bool:
        nd = self.nodes[i]
        return (
            self.cpu_alloc[i] + cpu <= nd.cpu_capacity_millicores
            and self.mem_alloc[i] + mem <= nd.mem_capacity_mb
        )

    def choose_node(self, cpu: int, mem: int) -> int | None:
        best, best_free = None, -1
        for i, nd in enumerate(self.nodes):
            if self._fits(i, cpu, mem):
                free = nd.cpu_capacity_millicores - self.cpu_alloc[i] - cpu
                if free > best_free:
                    best, best_free = i, free
        return best

    def try_place(self, pod_id: str, now_ms: int) -> Placement:
        pod = self.pods[pod_id]
        if pod.phase not in (PodPhase.SUBMITTED, PodPhase.PENDING):
            raise ClusterError(f"pod {pod_id!r} is {pod.phase.value}, cannot place")
        if pod.phase is PodPhase.PENDING and pod.next_eligible_ms is not None and pod.next_eligible_ms > now_ms:
            raise ClusterError(f"pod {pod_id!r} still backing off")
        cpu, mem = pod.spec.cpu_request_millicores, pod.spec.mem_request_mb
        if not any(
            cpu <= nd.cpu_capacity_millicores and mem <= nd.mem_capacity_mb for nd in self.nodes
        ):
            pod.phase = PodPhase.UNSCHEDULABLE
            return Placement(pod_id, None, unschedulable=True)
        i = self.choose_node(cpu, mem)
        if i is None:
            pod.phase = PodPhase.PENDING
            pod.attempts += 1
            pod.next_eligible_ms = now_ms + self.backoff.delay(pod.attempts)
            pod.fail_epoch = self.release_epoch
            return Placement(pod_id, None, pod.next_eligible_ms)
        self._allocate(pod, i, +1)
        pod.phase = PodPhase.CREATING
        pod.node = i
        return Placement(pod_id, self.nodes[i].id)

    def schedule_pass(self, now_ms: int) -> list[Placement]:
        """Try every eligible pod once, in submission order."""
        out = []
        while self._eligible:
            _, pod_id = heapq.heappop(self._eligible)
            if self.pods[pod_id].phase not in (PodPhase.SUBMITTED, PodPhase.PENDING):
                continue
            out.append(self.try_place(pod_id, now_ms))
        return out

    def _allocate(self, pod: PodState, i: int, sign: int) -> None:
        cpu = sign * pod.spec.cpu_request_millicores
        mem = sign * pod.spec.mem_request_mb
        self.cpu_alloc[i] += cpu
        self.mem_alloc[i] += mem
        if pod.spec.pool is not None:
            self.pool_cpu_alloc[i] += cpu
            self.pool_mem_alloc[i] += mem

    def mark_running(self, pod_id: str) -> None:
        pod = self.pods[pod_id]
        if pod.phase is not PodPhase.CREATING:
            raise ClusterError(f"pod {pod_id!r} is {pod.phase.value}, expected Creating")
        pod.phase = PodPhase.RUNNING

    def complete_pod(self, pod_id: str, now_ms: int, phase: PodPhase = PodPhase.SUCCEEDED) -> tuple[int, int]:
        pod = self.pods.get(pod_id)
        if pod is None or pod.phase is not PodPhase.RUNNING:
            state = "unknown" if pod is None else pod.phase.value
            raise ClusterError(f"cannot complete pod {pod_id!r}: {state}")
        self._allocate(pod, pod.node, -1)
        pod.phase = phase
        self.release_epoch += 1
        while self._parked:
            _, parked_id = heapq.heappop(self._parked)
            if self.pods[parked_id].phase is PodPhase.PENDING:
                heapq.heappush(self._eligible, (self.pods[parked_id].seq, parked_id))
        return pod.spec.cpu_request_millicores, pod.spec.mem_request_mb

    def cancel_pod(self, pod_id: str) -> None:
        """Delete a pod that never got a node."""
        pod = self.pods[pod_id]
        if pod.phase not in (PodPhase.SUBMITTED, PodPhase.PENDING, PodPhase.UNSCHEDULABLE):
            raise ClusterError(f"cannot cancel pod {pod_id!r}: {pod.phase.value}")
        pod.phase = PodPhase.TERMINATED

    def allocated_fraction(self) -> float:
        return sum(self.cpu_alloc) / self.total_cpu

    def pool_slots(self, cpu: int, mem: int) -> int:
        """Slots of size (cpu, mem) left once non-pool pods are accounted for."""
        total = 0
        for i, nd in enumerate(self.nodes):
            free_cpu = nd.cpu_capacity_millicores - (self.cpu_alloc[i] - self.pool_cpu_alloc[i])
            free_mem = nd.mem_capacity_mb - (self.mem_alloc[i] - self.pool_mem_alloc[i])
            total += min(free_cpu // cpu, free_mem // mem)
        return total

    def slot_capacity(self, cpu: int, mem: int) -> int:
        return sum(
            min(nd.cpu_capacity_millicores // cpu, nd.mem_capacity_mb // mem) for nd in self.nodes
        )

    def check_allocation(self) -> None:
        for i, nd in enumerate(self.nodes):
            if self.cpu_alloc[i] > nd.cpu_capacity_millicores or self.mem_alloc[i] > nd.mem_capacity_mb:
                raise ClusterError(f"node {nd.id} over-allocated")

    def has_fitting_room_for_eligible(self) -> bool:
        """True if some queued eligible pod would fit right now."""
        return any(
            self.choose_node(self.pods[p].spec.cpu_request_millicores, self.pods[p].spec.mem_request_mb) is not None
            for _, p in self._eligible
            if self.pods[p].phase in (PodPhase.SUBMITTED, PodPhase.PENDING)
        )
