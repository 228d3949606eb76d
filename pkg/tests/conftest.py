import random

import pytest

from kubewf.cluster import ClusterConfig
from kubewf.workflow import TaskSpec, WorkflowDag

TYPES = ("alpha", "beta", "gamma")


def chain(*runtimes, task_type="mAdd", **req):
    """Serial chain t1 -> t2 -> ... with the given runtimes."""
    tasks = []
    for i, rt in enumerate(runtimes, 1):
        parents = (f"t{i - 1}",) if i > 1 else ()
        tasks.append(TaskSpec(f"t{i}", task_type, rt, parents=parents, **req))
    return WorkflowDag("chain", tasks)


def independent(*runtimes, task_type="mAdd"):
    return WorkflowDag("flat", [TaskSpec(f"t{i}", task_type, rt) for i, rt in enumerate(runtimes, 1)])


def diamond():
    return WorkflowDag(
        "diamond",
        [
            TaskSpec("t1", "a", 1000),
            TaskSpec("t2", "b", 1000, parents=("t1",)),
            TaskSpec("t3", "b", 1000, parents=("t1",)),
            TaskSpec("t4", "c", 1000, parents=("t2", "t3")),
        ],
    )


def random_dag(rng: random.Random, max_tasks: int = 100, name: str = "rand") -> WorkflowDag:
    """Layered random DAG over a few task types; parents always come earlier."""
    n = rng.randint(1, max_tasks)
    tasks = []
    for i in range(n):
        k = rng.randint(0, min(i, 3))
        parents = tuple(sorted(rng.sample(range(i), k))) if k else ()
        tasks.append(
            TaskSpec(
                f"t{i:03d}",
                rng.choice(TYPES),
                rng.randint(0, 20) * 500,
                cpu_request_millicores=rng.choice((500, 1000, 2000)),
                mem_request_mb=rng.choice((1024, 2048, 4096)),
                parents=tuple(f"t{p:03d}" for p in parents),
            )
        )
    return WorkflowDag(name, tasks)


def one_node(**kw):
    return ClusterConfig(**{"node_count": 1, **kw})


@pytest.fixture
def tmp_out(tmp_path, monkeypatch):
    monkeypatch.delenv("KUBEWF_OUT", raising=False)
    return tmp_path


# one line per acceptance criterion, printed at the end of the session
ACCEPTANCE: list[str] = []


def record(number: int, title: str, ok: bool, measured: str) -> bool:
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {title}  [{measured}]"
    ACCEPTANCE.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
