"""Deterministic discrete-event engine.

Events are ordered by ``(time_ms, seq)`` where ``seq`` is the insertion
counter, so simultaneous events always resolve the same way.
"""

from __future__ import annotations

import heapq
import logging
from dataclasses import dataclass, field
from typing import Sequence

from .autoscaler import (
    PoolMetrics,
    ScaleDownStabilizer,
    ScalerConfig,
    desired_replicas,
    plan_scaling,
)
from .cluster import Cluster, ClusterConfig, ClusterError, PodPhase, PodSpec
from .execmodels import (
    BatchBuffer,
    Buffered,
    Enqueued,
    ExecutionModelConfig,
    SubmitPod,
    WorkerPool,
    dispatch_ready,
)
from .metrics import TraceEvent, makespan, running_series, stage_windows
from .workflow import WorkflowDag

log = logging.getLogger(__name__)

# event kinds
TASK_READY = "TaskReady"
DISPATCH = "Dispatch"
POD_ADMITTED = "PodAdmitted"
SCHEDULE_PASS = "SchedulePass"
POD_CREATED = "PodCreated"
TASK_STARTED = "TaskStarted"
TASK_COMPLETED = "TaskCompleted"
BATCH_TIMEOUT = "BatchTimeout"
SCALER_TICK = "ScalerTick"
BACKOFF_EXPIRED = "BackoffExpired"
WORKER_IDLE = "WorkerIdle"

# trace kinds dropped at compact verbosity
VERBOSE_ONLY = {"PodAdmitted", "PodPending", "ScaleDecision"}
PROGRESS = {"TaskStarted", "TaskCompleted", "PodSubmitted", "PodScheduled", "PodTerminated", "PodCompleted"}


class SimulationError(RuntimeError):
    pass


class DeadlockError(SimulationError):
    """No further progress is possible; ``stuck`` maps task id to a reason."""

    def __init__(self, message: str, stuck: dict[str, str]):
        super().__init__(message)
        self.stuck = stuck


@dataclass(frozen=True)
class Event:
    time_ms: int
    seq: int
    kind: str
    ref: object = None


@dataclass
class SimConfig:
    name: str
    workflow: WorkflowDag
    cluster: ClusterConfig = field(default_factory=ClusterConfig)
    model: ExecutionModelConfig = field(default_factory=ExecutionModelConfig)
    scaler: ScalerConfig = field(default_factory=ScalerConfig)
    seed: int = 1
    trace_verbosity: str = "full"
    max_sim_time_ms: int = 24 * 3600 * 1000
    check_invariants: bool = False

    def validate(self) -> None:
        self.model.validate(self.workflow.task_types())
        if self.trace_verbosity not in ("full", "compact"):
            raise ValueError(f"trace_verbosity must be 'full' or 'compact', not {self.trace_verbosity!r}")


@dataclass
class SimResult:
    name: str
    makespan_ms: int
    trace: list[TraceEvent]
    utilization: list[tuple[int, int]]
    stages: dict[str, dict[str, int]]
    audit: dict[str, int]
    slot_capacity: int
    total_cpu_m: int
    task_count: int
    seed: int

    def trace_hash(self) -> str:
        from .metrics import trace_hash

        return trace_hash(self.trace)


class Simulation:
    def __init__(self, config: SimConfig):
        config.validate()
        self.config = config
        self.dag = config.workflow
        self.model = config.model
        self.cluster = Cluster.from_config(config.cluster)
        self.overhead = config.cluster.pod_overhead_ms
        self.now = 0
        self._heap: list[tuple[int, int, str, object]] = []
        self._seq = 0
        self.trace: list[TraceEvent] = []
        self._full = config.trace_verbosity == "full"
        self._pass_scheduled = False

        self._missing_parents = {t.id: len(set(t.parents)) for t in self.dag.tasks}
        self.completed: set[str] = set()
        self.start_count: dict[str, int] = {}
        self.complete_count: dict[str, int] = {}

        # job / batch pods: pod id -> (task ids, index of task in flight)
        self._pod_tasks: dict[str, tuple[str, ...]] = {}
        self._pod_index: dict[str, int] = {}
        self._pod_pool: dict[str, WorkerPool] = {}
        self._buffers: dict[str, BatchBuffer] = {}
        self.pools: dict[str, WorkerPool] = {p.task_type: WorkerPool(p) for p in self.model.pools}
        self._stabilizers = {
            name: ScaleDownStabilizer(config.scaler.scale_down_stabilization_ms) for name in self.pools
        }
        self.finished_at: int | None = None
        self._unschedulable: list[str] = []
        # nothing in flight and no state change for this long means nothing ever will
        self._last_progress = 0
        self._watchdog_ms = (
            config.cluster.backoff.cap_ms
            + config.scaler.scale_down_stabilization_ms
            + 2 * config.scaler.interval_ms
            + max((r.timeout_ms for r in config.model.clustering), default=0)
            + max([config.cluster.pod_overhead_ms] + [p.creation_overhead_ms or 0 for p in config.model.pools])
            + config.model.engine_latency_ms
            + config.model.dequeue_latency_ms
        )

    # -- plumbing ---------------------------------------------------------

    def push(self, time_ms: int, kind: str, ref: object = None) -> None:
        heapq.heappush(self._heap, (time_ms, self._seq, kind, ref))
        self._seq += 1

    def emit(self, kind: str, task_id: str = "", pod_id: str = "", pool: str = "", node: str = "", detail: str = "") -> None:
        if kind in PROGRESS:
            self._last_progress = self.now
        if not self._full and kind in VERBOSE_ONLY:
            return
        self.trace.append(TraceEvent(self.now, kind, task_id, pod_id, pool, node, detail))

    def _request_pass(self) -> None:
        if not self._pass_scheduled:
            self._pass_scheduled = True
            self.push(self.now, SCHEDULE_PASS)

    # -- main loop --------------------------------------------------------

    def run(self) -> SimResult:
        for tid in self.dag.roots():
            self.push(0, TASK_READY, tid)
        if self.pools:
            self.push(0, SCALER_TICK)
        handlers = {
            TASK_READY: self._on_task_ready,
            DISPATCH: self._on_dispatch,
            POD_ADMITTED: self._on_pod_admitted,
            SCHEDULE_PASS: self._on_schedule_pass,
            POD_CREATED: self._on_pod_created,
            TASK_STARTED: self._on_task_started,
            TASK_COMPLETED: self._on_task_completed,
            BATCH_TIMEOUT: self._on_batch_timeout,
            SCALER_TICK: self._on_scaler_tick,
            BACKOFF_EXPIRED: self._on_backoff_expired,
            WORKER_IDLE: self._on_worker_idle,
        }
        while self._heap and self.finished_at is None:
            time_ms, _, kind, ref = heapq.heappop(self._heap)
            if time_ms > self.config.max_sim_time_ms:
                raise DeadlockError(
                    f"simulation exceeded max_sim_time_ms={self.config.max_sim_time_ms}", self._stuck_tasks()
                )
            self.now = time_ms
            handlers[kind](ref)
        if self.finished_at is None:
            stuck = self._stuck_tasks()
            first = next(iter(stuck))
            raise DeadlockError(
                f"deadlock at t={self.now} ms: {len(stuck)} tasks cannot complete, e.g. {first!r} ({stuck[first]})",
                stuck,
            )
        self._teardown()
        return self._result()

    def _stuck_tasks(self) -> dict[str, str]:
        stuck = {}
        for t in self.dag.tasks:
            if t.id in self.completed:
                continue
            if self._missing_parents[t.id]:
                stuck[t.id] = "blocked on parents"
                continue
            pod = self.cluster.pods.get(f"pod-{t.id}")
            stuck[t.id] = pod.phase.value if pod else "not running"
        # surface tasks carried by unschedulable pods first
        order = sorted(stuck, key=lambda k: (stuck[k] == "blocked on parents", k))
        return {k: stuck[k] for k in order}

    # -- tasks ------------------------------------------------------------

    def _on_task_ready(self, tid: str) -> None:
        self.emit("TaskReady", task_id=tid, detail=self.dag[tid].task_type)
        if self.model.engine_latency_ms:
            self.push(self.now + self.model.engine_latency_ms, DISPATCH, tid)
        else:
            self._on_dispatch(tid)

    def _on_dispatch(self, tid: str) -> None:
        task = self.dag[tid]
        action = dispatch_ready(task, self.model, self.now)
        if isinstance(action, SubmitPod):
            self._submit_tasks_pod(action.tasks)
        elif isinstance(action, Buffered):
            buf = self._buffers.get(task.task_type)
            if buf is None:
                buf = self._buffers[task.task_type] = BatchBuffer(self.model.clustering[action.rule_index])
            start_timer, batch = buf.add(tid, task.task_type, self.now)
            if batch is not None:
                self._submit_tasks_pod(batch.task_ids)
            elif start_timer:
                self.push(self.now + buf.rule.timeout_ms, BATCH_TIMEOUT, (task.task_type, buf.generation))
        elif isinstance(action, Enqueued):
            pool = self.pools[action.pool]
            pool.queue.append(tid)
            self.emit("TaskQueued", task_id=tid, pool=pool.name, detail=task.task_type)
            if pool.idle:
                wid = next(iter(pool.idle))
                self._worker_fetch(pool, wid)

    def _on_batch_timeout(self, ref) -> None:
        ttype, generation = ref
        batch = self._buffers[ttype].on_timeout(generation, self.now)
        if batch is not None:
            self._submit_tasks_pod(batch.task_ids)

    def _start_task(self, tid: str, pod_id: str, pool: str = "") -> None:
        self.start_count[tid] = self.start_count.get(tid, 0) + 1
        if self.config.check_invariants:
            missing = [p for p in self.dag[tid].parents if p not in self.completed]
            if missing:
                raise SimulationError(f"task {tid!r} started before parent {missing[0]!r} completed")
        self.emit("TaskStarted", task_id=tid, pod_id=pod_id, pool=pool, detail=self.dag[tid].task_type)
        self.push(self.now + self.dag[tid].runtime_ms, TASK_COMPLETED, (tid, pod_id))

    def _on_task_started(self, ref) -> None:
        tid, pod_id, pool = ref
        self._start_task(tid, pod_id, pool)

    def _on_task_completed(self, ref) -> None:
        tid, pod_id = ref
        self.complete_count[tid] = self.complete_count.get(tid, 0) + 1
        self.completed.add(tid)
        pool = self._pod_pool.get(pod_id)
        self.emit("TaskCompleted", task_id=tid, pod_id=pod_id, pool=pool.name if pool else "", detail=self.dag[tid].task_type)
        for child in self.dag.children(tid):
            self._missing_parents[child] -= 1
            if self._missing_parents[child] == 0:
                self.push(self.now, TASK_READY, child)
        if pool is None:
            tasks = self._pod_tasks[pod_id]
            i = self._pod_index[pod_id] + 1
            if i < len(tasks):
                self._pod_index[pod_id] = i
                self._start_task(tasks[i], pod_id)
            else:
                self.cluster.complete_pod(pod_id, self.now)
                self.emit("PodCompleted", pod_id=pod_id)
                if self.cluster.has_eligible():
                    self._request_pass()
        else:
            pool.workers[pod_id] = None
            if pod_id in pool.draining:
                self._terminate_worker(pool, pod_id)
            else:
                self._worker_ready(pool, pod_id)
        if len(self.completed) == len(self.dag):
            self.finished_at = self.now

    # -- pods -------------------------------------------------------------

    def _submit_tasks_pod(self, task_ids: tuple[str, ...]) -> None:
        tasks = [self.dag[t] for t in task_ids]
        pod_id = f"pod-{task_ids[0]}"
        spec = PodSpec(
            pod_id,
            max(t.cpu_request_millicores for t in tasks),
            max(t.mem_request_mb for t in tasks),
            self.overhead,
            payload=task_ids,
        )
        self._pod_tasks[pod_id] = task_ids
        self._pod_index[pod_id] = 0
        self._submit(spec, detail=f"tasks={len(task_ids)} type={tasks[0].task_type}")

    def _submit(self, spec: PodSpec, detail: str, pool: str = "") -> None:
        admit_at = self.cluster.submit_pod(spec, self.now)
        self.emit("PodSubmitted", pod_id=spec.id, pool=pool, detail=detail)
        self.push(admit_at, POD_ADMITTED, spec.id)

    def _on_pod_admitted(self, pod_id: str) -> None:
        pod = self.cluster.pods[pod_id]
        if pod.phase is not PodPhase.SUBMITTED:
            return
        self.emit("PodAdmitted", pod_id=pod_id, pool=pod.spec.pool or "")
        self.cluster.mark_eligible(pod_id, self.now)
        self._request_pass()

    def _on_backoff_expired(self, pod_id: str) -> None:
        if self.cluster.backoff_expired(pod_id, self.now):
            self._request_pass()

    def _on_schedule_pass(self, _ref) -> None:
        self._pass_scheduled = False
        for placement in self.cluster.schedule_pass(self.now):
            pod = self.cluster.pods[placement.pod_id]
            pool = pod.spec.pool or ""
            if placement.node is not None:
                self.emit(
                    "PodScheduled",
                    pod_id=placement.pod_id,
                    pool=pool,
                    node=placement.node,
                    detail=f"cpu_m={pod.spec.cpu_request_millicores} mem_mb={pod.spec.mem_request_mb}",
                )
                self.push(self.now + pod.spec.creation_overhead_ms, POD_CREATED, placement.pod_id)
            elif placement.unschedulable:
                self.emit("PodUnschedulable", pod_id=placement.pod_id, pool=pool)
                self._unschedulable.append(placement.pod_id)
                if pool:
                    queued = list(self.pools[pool].queue)
                    raise DeadlockError(
                        f"worker pod {placement.pod_id!r} of pool {pool!r} can never be scheduled",
                        {t: f"queued for unschedulable pool {pool}" for t in queued},
                    )
            else:
                self.emit(
                    "PodPending",
                    pod_id=placement.pod_id,
                    pool=pool,
                    detail=f"attempts={pod.attempts} next={placement.next_eligible_ms}",
                )
                self.push(placement.next_eligible_ms, BACKOFF_EXPIRED, placement.pod_id)
        if self.config.check_invariants:
            self.cluster.check_allocation()
            if self.cluster.has_eligible():
                raise SimulationError("eligible pods left unscheduled after a pass")

    def _on_pod_created(self, pod_id: str) -> None:
        pod = self.cluster.pods[pod_id]
        self.cluster.mark_running(pod_id)
        self.emit("PodCreated", pod_id=pod_id, pool=pod.spec.pool or "", node=self.cluster.nodes[pod.node].id)
        pool = self._pod_pool.get(pod_id)
        if pool is None:
            self._start_task(self._pod_tasks[pod_id][0], pod_id)
            return
        pool.pending.discard(pod_id)
        pool.workers[pod_id] = None
        if pod_id in pool.draining:
            self._terminate_worker(pool, pod_id)
        else:
            self._worker_ready(pool, pod_id)

    # -- worker pools -----------------------------------------------------

    def _worker_ready(self, pool: WorkerPool, wid: str) -> None:
        pool.idle[wid] = None
        if pool.queue:
            self._worker_fetch(pool, wid)

    def _worker_fetch(self, pool: WorkerPool, wid: str) -> None:
        del pool.idle[wid]
        tid = pool.queue.popleft()
        pool.workers[wid] = tid
        if self.model.dequeue_latency_ms:
            self.push(self.now + self.model.dequeue_latency_ms, TASK_STARTED, (tid, wid, pool.name))
        else:
            self._start_task(tid, wid, pool.name)

    def _on_worker_idle(self, ref) -> None:
        pool, wid = ref
        if wid in pool.workers and pool.workers[wid] is None and wid not in pool.draining:
            self._worker_ready(pool, wid)

    def _terminate_worker(self, pool: WorkerPool, wid: str) -> None:
        pod = self.cluster.pods[wid]
        if pod.phase is PodPhase.RUNNING:
            self.cluster.complete_pod(wid, self.now, PodPhase.TERMINATED)
            if self.cluster.has_eligible():
                self._request_pass()
        else:
            self.cluster.cancel_pod(wid)
        pool.workers.pop(wid, None)
        pool.idle.pop(wid, None)
        pool.pending.discard(wid)
        pool.draining.discard(wid)
        self.emit("PodTerminated", pod_id=wid, pool=pool.name)

    def _spawn_worker(self, pool: WorkerPool) -> None:
        spec = pool.spec
        wid = pool.new_worker_id()
        overhead = self.overhead if spec.creation_overhead_ms is None else spec.creation_overhead_ms
        pod = PodSpec(wid, spec.cpu_request_millicores, spec.mem_request_mb, overhead, payload=pool.name, pool=pool.name)
        pool.pending.add(wid)
        self._pod_pool[wid] = pool
        self._submit(pod, detail="worker", pool=pool.name)

    def worker_slots(self) -> int:
        """Schedulable worker slots S, net of non-pool pods."""
        cpu = max(p.spec.cpu_request_millicores for p in self.pools.values())
        mem = max(p.spec.mem_request_mb for p in self.pools.values())
        return self.cluster.pool_slots(cpu, mem)

    def pool_metrics(self) -> list[PoolMetrics]:
        return [
            PoolMetrics(
                name,
                len(pool.queue),
                pool.busy_count() - sum(1 for w in pool.draining if pool.workers.get(w) is not None),
                pool.replicas(),
                pool.spec.min_replicas,
                pool.spec.max_replicas,
            )
            for name, pool in sorted(self.pools.items())
        ]

    def _on_scaler_tick(self, _ref) -> None:
        if self.finished_at is not None:
            return
        metrics = self.pool_metrics()
        slots = self.worker_slots()
        targets = desired_replicas(metrics, slots)
        acted = False
        for m in metrics:
            pool = self.pools[m.pool]
            target = targets[m.pool]
            ceiling = self.config.scaler.scale_up_ceiling(m.current_replicas)
            if ceiling is not None:
                target = min(target, ceiling)
            stabilized = self._stabilizers[m.pool].recommend(self.now, target)
            cancellable = sorted(
                (w for w in pool.pending if w not in pool.draining and self.cluster.pods[w].phase in (PodPhase.SUBMITTED, PodPhase.PENDING)),
                reverse=True,
            )
            idle = sorted((w for w in pool.idle if w not in pool.draining), reverse=True)
            busy = sorted(
                (w for w, t in pool.workers.items() if t is not None and w not in pool.draining), reverse=True
            )
            plan = plan_scaling(m.current_replicas, target, len(cancellable), len(idle), len(busy), stabilized)
            for _ in range(plan.submit):
                self._spawn_worker(pool)
            for wid in cancellable[: plan.cancel_pending]:
                self._terminate_worker(pool, wid)
            for wid in idle[: plan.remove_idle]:
                self._terminate_worker(pool, wid)
            for wid in busy[: plan.drain_busy]:
                pool.draining.add(wid)
            acted = acted or bool(plan.submit)
            self.emit(
                "ScaleDecision",
                pool=m.pool,
                detail=(
                    f"queue={m.queue_length} busy={m.busy_workers} current={m.current_replicas} "
                    f"slots={slots} target={target} applied={plan.effective_target}"
                ),
            )
        if self.now - self._last_progress > self._watchdog_ms and not self._work_in_flight():
            stuck = self._stuck_tasks()
            raise DeadlockError(
                f"no progress since t={self._last_progress} ms: pending work cannot be placed next to idle pool workers",
                stuck,
            )
        if not acted and self._idle_forever():
            stuck = {t: "queued, pool cannot scale" for p in self.pools.values() for t in p.queue}
            raise DeadlockError(f"deadlock at t={self.now} ms: queued tasks but no pool can scale", stuck or self._stuck_tasks())
        self.push(self.now + self.config.scaler.interval_ms, SCALER_TICK)

    def _work_in_flight(self) -> bool:
        if any(pool.busy_count() for pool in self.pools.values()):
            return True
        return any(
            p.phase in (PodPhase.CREATING, PodPhase.RUNNING) and p.spec.pool is None for p in self.cluster.pods.values()
        )

    def _idle_forever(self) -> bool:
        """Nothing in flight anywhere and no future event besides ticks."""
        if any(kind != SCALER_TICK for _, _, kind, _ in self._heap):
            return False
        live = (PodPhase.SUBMITTED, PodPhase.PENDING, PodPhase.CREATING, PodPhase.RUNNING)
        if any(p.phase in live and p.spec.pool is None for p in self.cluster.pods.values()):
            return False
        if any(b.tasks for b in self._buffers.values()):
            return False
        return not any(pool.workers or pool.pending for pool in self.pools.values())

    def _teardown(self) -> None:
        for pool in self.pools.values():
            for wid in sorted(set(pool.workers) | set(pool.pending)):
                pod = self.cluster.pods[wid]
                if pod.phase is PodPhase.CREATING:
                    continue
                self._terminate_worker(pool, wid)

    # -- result -----------------------------------------------------------

    def _result(self) -> SimResult:
        dups = [t for t, n in self.start_count.items() if n != 1]
        if dups or len(self.start_count) != len(self.dag) or any(n != 1 for n in self.complete_count.values()):
            raise SimulationError(f"exactly-once audit failed (e.g. {dups[:1]})")
        if self.pools:
            cpu = max(p.spec.cpu_request_millicores for p in self.pools.values())
            mem = max(p.spec.mem_request_mb for p in self.pools.values())
        else:
            cpu = max(t.cpu_request_millicores for t in self.dag.tasks)
            mem = max(t.mem_request_mb for t in self.dag.tasks)
        return SimResult(
            name=self.config.name,
            makespan_ms=makespan(self.trace),
            trace=self.trace,
            utilization=running_series(self.trace),
            stages=stage_windows(self.trace),
            audit={"tasks": len(self.dag), "started_once": len(self.start_count), "completed_once": len(self.complete_count)},
            slot_capacity=self.cluster.slot_capacity(cpu, mem),
            total_cpu_m=self.cluster.total_cpu,
            task_count=len(self.dag),
            seed=self.config.seed,
        )


def run(config: SimConfig) -> SimResult:
    return Simulation(config).run()


@dataclass
class ScenarioError:
    name: str
    error: str
    kind: str


def run_suite(configs: Sequence[SimConfig], workers: int = 1) -> dict[str, SimResult | ScenarioError]:
    """Run independent scenarios keyed by name; failures are recorded, not raised."""
    if workers > 1 and len(configs) > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(workers) as ex:
            outcomes = list(ex.map(_run_safely, configs))
    else:
        outcomes = [_run_safely(c) for c in configs]
    return {cfg.name: out for cfg, out in zip(configs, outcomes)}


def _run_safely(cfg: SimConfig) -> SimResult | ScenarioError:
    try:
        return run(cfg)
    except (SimulationError, ClusterError, ValueError) as exc:
        log.warning("scenario %s failed: %s", cfg.name, exc)
        return ScenarioError(cfg.name, str(exc), type(exc).__name__)
