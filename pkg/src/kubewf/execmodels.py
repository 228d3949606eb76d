"""Execution policies mapping ready tasks onto pods.

Three modes exist per task type: one Job per task, clustered Jobs (batches of
same-type tasks run back to back in one pod) and worker pools fed by a FIFO
queue.  A hybrid model is simply a per-type mix of these.
"""

from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .workflow import TaskSpec


class ModelError(ValueError):
    pass


class Mode(str, enum.Enum):
    JOB = "job"
    CLUSTERED = "clustered"
    POOL = "pool"


@dataclass(frozen=True)
class ClusteringRule:
    match_task: tuple[str, ...]
    size: int
    timeout_ms: int = 3000

    def __post_init__(self):
        if self.size < 1:
            raise ModelError("clustering size must be >= 1")
        if self.timeout_ms < 0:
            raise ModelError("clustering timeout must be >= 0")

    def to_dict(self) -> dict:
        return {"matchTask": list(self.match_task), "size": self.size, "timeoutMs": self.timeout_ms}


def parse_clustering_rules(doc: Sequence[Mapping]) -> list[ClusteringRule]:
    """Read rules given as ``[{"matchTask": [...], "size": n, "timeoutMs": ms}]``."""
    rules = []
    for i, raw in enumerate(doc):
        try:
            match = raw["matchTask"]
            if isinstance(match, str):
                match = [match]
            rules.append(ClusteringRule(tuple(match), int(raw["size"]), int(raw.get("timeoutMs", 3000))))
        except (KeyError, TypeError) as exc:
            raise ModelError(f"clustering rule [{i}]: {exc}") from exc
    return rules


@dataclass(frozen=True)
class PoolSpec:
    task_type: str
    cpu_request_millicores: int = 1000
    mem_request_mb: int = 2048
    creation_overhead_ms: int | None = None
    min_replicas: int = 0
    max_replicas: int | None = None

    def __post_init__(self):
        if self.min_replicas < 0:
            raise ModelError("min_replicas must be >= 0")
        if self.max_replicas is not None and self.max_replicas < self.min_replicas:
            raise ModelError(f"pool {self.task_type!r}: min_replicas > max_replicas")

    def to_dict(self) -> dict:
        d = {
            "type": self.task_type,
            "cpu_m": self.cpu_request_millicores,
            "mem_mb": self.mem_request_mb,
            "min": self.min_replicas,
            "max": self.max_replicas,
        }
        if self.creation_overhead_ms is not None:
            d["overhead_ms"] = self.creation_overhead_ms
        return d

    @classmethod
    def from_dict(cls, doc: Mapping) -> "PoolSpec":
        return cls(
            task_type=doc["type"],
            cpu_request_millicores=doc.get("cpu_m", 1000),
            mem_request_mb=doc.get("mem_mb", 2048),
            creation_overhead_ms=doc.get("overhead_ms"),
            min_replicas=doc.get("min", 0),
            max_replicas=doc.get("max"),
        )


@dataclass
class ExecutionModelConfig:
    """Per-type policy.

    A type's mode is, in order: the explicit ``modes`` entry, ``clustered``
    if a rule matches it, ``pool`` if a pool exists for it, else ``default``.
    """

    default: Mode | None = Mode.JOB
    modes: dict[str, Mode] = field(default_factory=dict)
    clustering: list[ClusteringRule] = field(default_factory=list)
    pools: list[PoolSpec] = field(default_factory=list)
    engine_latency_ms: int = 0
    dequeue_latency_ms: int = 0

    def __post_init__(self):
        self.modes = {k: Mode(v) for k, v in self.modes.items()}
        if self.default is not None:
            self.default = Mode(self.default)
        seen: set[str] = set()
        for rule in self.clustering:
            dup = seen.intersection(rule.match_task)
            if dup:
                raise ModelError(f"task type {sorted(dup)[0]!r} matched by more than one clustering rule")
            seen.update(rule.match_task)
        pool_types = [p.task_type for p in self.pools]
        if len(set(pool_types)) != len(pool_types):
            raise ModelError("duplicate pool for a task type")

    def rule_for(self, task_type: str) -> ClusteringRule | None:
        for rule in self.clustering:
            if task_type in rule.match_task:
                return rule
        return None

    def pool_for(self, task_type: str) -> PoolSpec | None:
        for p in self.pools:
            if p.task_type == task_type:
                return p
        return None

    def mode_for(self, task_type: str) -> Mode:
        mode = self.modes.get(task_type)
        if mode is None:
            if self.rule_for(task_type) is not None:
                mode = Mode.CLUSTERED
            elif self.pool_for(task_type) is not None:
                mode = Mode.POOL
            else:
                mode = self.default
        if mode is None:
            raise ModelError(f"no execution mode for task type {task_type!r}")
        if mode is Mode.CLUSTERED and self.rule_for(task_type) is None:
            raise ModelError(f"task type {task_type!r} is clustered but no rule matches it")
        if mode is Mode.POOL and self.pool_for(task_type) is None:
            raise ModelError(f"task type {task_type!r} runs in a pool but has no pool spec")
        return mode

    def validate(self, task_types: Iterable[str]) -> None:
        for t in task_types:
            self.mode_for(t)

    def to_dict(self) -> dict:
        return {
            "default": self.default.value if self.default else None,
            "modes": {k: v.value for k, v in self.modes.items()},
            "clustering": [r.to_dict() for r in self.clustering],
            "engine_latency_ms": self.engine_latency_ms,
            "dequeue_latency_ms": self.dequeue_latency_ms,
        }


# --- dispatch -------------------------------------------------------------


@dataclass(frozen=True)
class SubmitPod:
    tasks: tuple[str, ...]


@dataclass(frozen=True)
class Buffered:
    rule_index: int


@dataclass(frozen=True)
class Enqueued:
    pool: str


@dataclass(frozen=True)
class Batch:
    task_ids: tuple[str, ...]
    task_type: str
    formation_time_ms: int

    def __post_init__(self):
        if not self.task_ids:
            raise ModelError("a batch holds at least one task")


class BatchBuffer:
    """Open buffer of one clustering rule."""

    def __init__(self, rule: ClusteringRule):
        self.rule = rule
        self.tasks: list[str] = []
        self.task_type: str | None = None
        # bumped whenever the buffer empties so stale timeouts are ignored
        self.generation = 0
        self.opened_ms: int | None = None

    def add(self, task_id: str, task_type: str, now_ms: int) -> tuple[bool, Batch | None]:
        """Append a task; return (timer should start, full batch if formed)."""
        start_timer = not self.tasks
        if start_timer:
            self.opened_ms = now_ms
        self.tasks.append(task_id)
        self.task_type = task_type
        if len(self.tasks) >= self.rule.size or self.rule.timeout_ms == 0:
            return False, self.flush(now_ms)
        return start_timer, None

    def flush(self, now_ms: int) -> Batch | None:
        if not self.tasks:
            return None
        batch = Batch(tuple(self.tasks), self.task_type, now_ms)
        self.tasks = []
        self.generation += 1
        self.opened_ms = None
        return batch

    def on_timeout(self, generation: int, now_ms: int) -> Batch | None:
        if generation != self.generation:
            return None
        return self.flush(now_ms)


def form_batches(buffer: BatchBuffer, arrivals: Iterable[tuple[str, str, int]], until_ms: int | None = None) -> list[Batch]:
    """Feed time-ordered arrivals ``(task_id, task_type, t)`` through a buffer.

    Pure helper mirroring the event loop: a pending timeout at ``D`` fires
    before any arrival stamped ``D`` or later.
    """
    out: list[Batch] = []
    deadline: int | None = None
    for task_id, task_type, t in arrivals:
        if deadline is not None and t >= deadline:
            out.append(buffer.flush(deadline))
            deadline = None
        start, batch = buffer.add(task_id, task_type, t)
        if batch is not None:
            out.append(batch)
            deadline = None
        elif start:
            deadline = t + buffer.rule.timeout_ms
    if buffer.tasks and deadline is not None and (until_ms is None or until_ms >= deadline):
        out.append(buffer.flush(deadline))
    return out


class WorkerPool:
    """FIFO work queue plus the worker pods bound to it."""

    def __init__(self, spec: PoolSpec):
        self.spec = spec
        self.queue: deque[str] = deque()
        self.workers: dict[str, str | None] = {}  # pod id -> task in flight
        self.draining: set[str] = set()
        self.pending: set[str] = set()  # submitted, not yet Running
        self.idle: dict[str, None] = {}  # ordered set of idle running workers
        self.counter = 0

    @property
    def name(self) -> str:
        return self.spec.task_type

    def new_worker_id(self) -> str:
        wid = f"{self.name}-w{self.counter:05d}"
        self.counter += 1
        return wid

    def busy_count(self) -> int:
        return sum(1 for t in self.workers.values() if t is not None)

    def replicas(self) -> int:
        """Live workers not marked for removal, including not-yet-running ones."""
        return len(self.workers) + len(self.pending) - len(self.draining)


def dispatch_ready(task: TaskSpec, model: ExecutionModelConfig, now_ms: int):
    """Decide what to do with a newly ready task (no state is touched)."""
    mode = model.mode_for(task.task_type)
    if mode is Mode.JOB:
        return SubmitPod((task.id,))
    if mode is Mode.CLUSTERED:
        rule = model.rule_for(task.task_type)
        return Buffered(model.clustering.index(rule))
    return Enqueued(task.task_type)


def execute_payload(start_ms: int, runtimes: Sequence[int]) -> list[tuple[int, int]]:
    """(start, end) of each task run back to back inside one pod."""
    if not runtimes:
        raise ModelError("empty payload")
    out = []
    t = start_ms
    for r in runtimes:
        out.append((t, t + r))
        t += r
    return out
