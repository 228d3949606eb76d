"""Workflow DAGs: typed tasks, JSON I/O and a Montage-shaped generator."""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from typing import IO, Iterable, Mapping

MONTAGE_PARALLEL_TYPES = ("mProject", "mDiffFit", "mBackground")
MONTAGE_SERIAL_TYPES = ("mConcatFit", "mBgModel", "mImgtbl", "mAdd", "mShrink", "mJPEG")

DEFAULT_RUNTIMES_MS = {
    "mProject": 12_000,
    "mDiffFit": 2_000,
    "mBackground": 4_000,
    **{t: 10_000 for t in MONTAGE_SERIAL_TYPES},
}
DEFAULT_JITTER = 0.25
DEFAULT_CPU_M = 1000
DEFAULT_MEM_MB = 2048

# mDiffFit pairs images whose indices differ by 1..DIFF_WINDOW
DIFF_WINDOW = 3


class WorkflowError(ValueError):
    """Invalid workflow document or DAG structure.

    ``task_id`` names the offending task when there is one.
    """

    def __init__(self, message: str, task_id: str | None = None):
        super().__init__(message)
        self.task_id = task_id


@dataclass(frozen=True)
class TaskSpec:
    id: str
    task_type: str
    runtime_ms: int
    cpu_request_millicores: int = DEFAULT_CPU_M
    mem_request_mb: int = DEFAULT_MEM_MB
    parents: tuple[str, ...] = ()

    def __post_init__(self):
        if self.runtime_ms < 0:
            raise WorkflowError(f"task {self.id!r}: runtime_ms must be >= 0", self.id)
        if self.cpu_request_millicores <= 0 or self.mem_request_mb <= 0:
            raise WorkflowError(f"task {self.id!r}: resource requests must be > 0", self.id)


class WorkflowDag:
    """Validated, acyclic collection of tasks in file order."""

    def __init__(self, name: str, tasks: Iterable[TaskSpec]):
        self.name = name
        self.tasks: tuple[TaskSpec, ...] = tuple(tasks)
        self._by_id: dict[str, TaskSpec] = {}
        for t in self.tasks:
            if t.id in self._by_id:
                raise WorkflowError(f"duplicate task id {t.id!r}", t.id)
            self._by_id[t.id] = t
        children: dict[str, list[str]] = {t.id: [] for t in self.tasks}
        for t in self.tasks:
            for p in t.parents:
                if p not in self._by_id:
                    raise WorkflowError(f"task {t.id!r} has unknown parent {p!r}", t.id)
                children[p].append(t.id)
        self._children = {k: tuple(v) for k, v in children.items()}
        self._topo = self._toposort()

    def _toposort(self) -> tuple[str, ...]:
        indeg = {t.id: len(set(t.parents)) for t in self.tasks}
        order = [t.id for t in self.tasks if indeg[t.id] == 0]
        i = 0
        while i < len(order):
            for c in self._children[order[i]]:
                indeg[c] -= 1
                if indeg[c] == 0:
                    order.append(c)
            i += 1
        if len(order) != len(self.tasks):
            stuck = next(t.id for t in self.tasks if indeg[t.id] > 0)
            raise WorkflowError(f"cycle detected involving task {stuck!r}", stuck)
        return tuple(order)

    def __len__(self) -> int:
        return len(self.tasks)

    def __contains__(self, task_id: str) -> bool:
        return task_id in self._by_id

    def __getitem__(self, task_id: str) -> TaskSpec:
        return self._by_id[task_id]

    def children(self, task_id: str) -> tuple[str, ...]:
        return self._children[task_id]

    def topological_order(self) -> tuple[str, ...]:
        return self._topo

    def roots(self) -> list[str]:
        return [t.id for t in self.tasks if not t.parents]

    def edge_count(self) -> int:
        return sum(len(set(t.parents)) for t in self.tasks)

    def type_counts(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for t in self.tasks:
            counts[t.task_type] = counts.get(t.task_type, 0) + 1
        return counts

    def task_types(self) -> list[str]:
        return list(dict.fromkeys(t.task_type for t in self.tasks))

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "tasks": [
                {
                    "id": t.id,
                    "type": t.task_type,
                    "runtime_ms": t.runtime_ms,
                    "cpu_m": t.cpu_request_millicores,
                    "mem_mb": t.mem_request_mb,
                    "parents": list(t.parents),
                }
                for t in self.tasks
            ],
        }

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, WorkflowDag):
            return NotImplemented
        return self.name == other.name and self.tasks == other.tasks

    def __repr__(self) -> str:
        return f"WorkflowDag(name={self.name!r}, tasks={len(self.tasks)})"


def dag_from_dict(doc: Mapping) -> WorkflowDag:
    if not isinstance(doc, Mapping) or not isinstance(doc.get("tasks"), list):
        raise WorkflowError("workflow document must be an object with a 'tasks' list")
    tasks = []
    for i, raw in enumerate(doc["tasks"]):
        try:
            tasks.append(
                TaskSpec(
                    id=str(raw["id"]),
                    task_type=str(raw["type"]),
                    runtime_ms=int(raw["runtime_ms"]),
                    cpu_request_millicores=int(raw.get("cpu_m", DEFAULT_CPU_M)),
                    mem_request_mb=int(raw.get("mem_mb", DEFAULT_MEM_MB)),
                    parents=tuple(str(p) for p in raw.get("parents", [])),
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, WorkflowError):
                raise
            raise WorkflowError(f"tasks[{i}]: malformed task entry ({exc})") from exc
    return WorkflowDag(str(doc.get("name", "workflow")), tasks)


def load_workflow(source: IO[bytes] | IO[str] | bytes | str) -> WorkflowDag:
    """Parse a workflow JSON document from a stream or raw bytes/str."""
    if hasattr(source, "read"):
        source = source.read()
    try:
        doc = json.loads(source)
    except json.JSONDecodeError as exc:
        raise WorkflowError(f"parse error: {exc}") from exc
    return dag_from_dict(doc)


def dumps_workflow(dag: WorkflowDag) -> str:
    return json.dumps(dag.to_dict(), indent=1, sort_keys=False) + "\n"


def ready_tasks(dag: WorkflowDag, completed: set[str] | frozenset[str]) -> set[str]:
    unknown = [c for c in completed if c not in dag]
    if unknown:
        raise WorkflowError(f"unknown task id {sorted(unknown)[0]!r} in completed set", sorted(unknown)[0])
    return {
        t.id
        for t in dag.tasks
        if t.id not in completed and all(p in completed for p in t.parents)
    }


def critical_path_ms(dag: WorkflowDag) -> int:
    """Longest runtime-weighted path; a lower bound on any makespan."""
    finish: dict[str, int] = {}
    for tid in dag.topological_order():
        t = dag[tid]
        start = max((finish[p] for p in t.parents), default=0)
        finish[tid] = start + t.runtime_ms
    return max(finish.values(), default=0)


@dataclass(frozen=True)
class RuntimeModel:
    mean_ms: int
    jitter_fraction: float = DEFAULT_JITTER

    def __post_init__(self):
        if self.mean_ms < 0:
            raise WorkflowError("mean_ms must be >= 0")
        if not 0 <= self.jitter_fraction < 1:
            raise WorkflowError("jitter_fraction must be in [0, 1)")

    def draw(self, rng: random.Random) -> int:
        return round(self.mean_ms * (1 + self.jitter_fraction * rng.uniform(-1.0, 1.0)))


@dataclass(frozen=True)
class MontageParams:
    n_inputs: int
    seed: int = 1
    runtimes: Mapping[str, RuntimeModel] = field(
        default_factory=lambda: {t: RuntimeModel(ms) for t, ms in DEFAULT_RUNTIMES_MS.items()}
    )
    requests: Mapping[str, tuple[int, int]] = field(default_factory=dict)

    def runtime_model(self, task_type: str) -> RuntimeModel:
        if task_type in self.runtimes:
            return self.runtimes[task_type]
        return RuntimeModel(DEFAULT_RUNTIMES_MS[task_type])

    def request(self, task_type: str) -> tuple[int, int]:
        return tuple(self.requests.get(task_type, (DEFAULT_CPU_M, DEFAULT_MEM_MB)))


def generate_montage(params: MontageParams) -> WorkflowDag:
    """Build a Montage-shaped DAG with ``5 * n_inputs`` tasks.

    mDiffFit tasks are listed by their higher image index so that they
    become ready in the same order as the mProject stage completes.
    """
    n = params.n_inputs
    if n < 4:
        raise WorkflowError(f"n_inputs must be >= 4, got {n}")
    rng = random.Random(params.seed)
    width = len(str(n - 1))
    tasks: list[TaskSpec] = []

    def add(tid: str, ttype: str, parents: tuple[str, ...]) -> None:
        cpu, mem = params.request(ttype)
        runtime = params.runtime_model(ttype).draw(rng)
        tasks.append(TaskSpec(tid, ttype, runtime, cpu, mem, parents))

    proj = [f"mProject_{i:0{width}d}" for i in range(n)]
    for tid in proj:
        add(tid, "mProject", ())
    diffs = []
    for j in range(1, n):
        for i in range(max(0, j - DIFF_WINDOW), j):
            tid = f"mDiffFit_{i:0{width}d}_{j:0{width}d}"
            diffs.append(tid)
            add(tid, "mDiffFit", (proj[i], proj[j]))
    add("mConcatFit", "mConcatFit", tuple(diffs))
    add("mBgModel", "mBgModel", ("mConcatFit",))
    backgrounds = [f"mBackground_{i:0{width}d}" for i in range(n)]
    for i, tid in enumerate(backgrounds):
        add(tid, "mBackground", ("mBgModel", proj[i]))
    add("mImgtbl", "mImgtbl", tuple(backgrounds))
    add("mAdd", "mAdd", ("mImgtbl",))
    add("mShrink", "mShrink", ("mAdd",))
    add("mJPEG", "mJPEG", ("mShrink",))
    return WorkflowDag(f"montage-{n}", tasks)
