"""Acceptance criteria, each checked at its stated tolerance.

Every test records one PASS/FAIL line (printed in the pytest terminal
summary and by ``python tests/test_acceptance.py``).
"""

import json
import math
import random
import time
from fractions import Fraction
from pathlib import Path

import pytest

from conftest import TYPES, record, random_dag
from kubewf import experiments
from kubewf.autoscaler import PoolMetrics, ScalerConfig, apportion, desired_replicas, largest_remainder
from kubewf.cluster import BackoffPolicy, ClusterConfig, backoff_delay
from kubewf.execmodels import ClusteringRule, ExecutionModelConfig, PoolSpec
from kubewf.metrics import (
    backoff_pending_during,
    executed_work,
    integrate,
    mean_running,
    running_series,
    stall_intervals,
)
from kubewf.scenario import load_scenario
from kubewf.simulator import DeadlockError, SimConfig, run
from kubewf.workflow import MONTAGE_PARALLEL_TYPES, TaskSpec, WorkflowDag

ROOT = Path(__file__).parent.parent
SEEDS = (1, 2, 3)
N_INPUTS = 3200
GOLDEN = Path(__file__).parent / "data" / "trace_hashes.json"


@pytest.fixture(scope="module")
def reference_runs():
    """job, clustered grid and hybrid pools at 16k tasks for each seed."""
    t0 = time.perf_counter()
    out = {}
    for seed in SEEDS:
        job = experiments.job_scenario(N_INPUTS, seed)
        dag = job.load_dag()
        grid = experiments.clustered_grid(N_INPUTS, seed)
        pool = experiments.hybrid_pool_scenario(N_INPUTS, seed)
        out[seed] = {
            "job": run(job.to_sim_config(dag)),
            "grid": [run(sc.to_sim_config(dag)) for sc in grid],
            "pool": run(pool.to_sim_config(dag)),
        }
    return out, time.perf_counter() - t0


def parallel_window(res):
    st = res.stages
    return (
        min(st[t]["first_ready"] for t in MONTAGE_PARALLEL_TYPES),
        max(st[t]["last_completed"] for t in MONTAGE_PARALLEL_TYPES),
    )


def test_1_model_ordering(reference_runs):
    runs, wall = reference_runs
    ok, parts = wall < 300, []
    for seed, r in runs.items():
        best = min(r["grid"], key=lambda x: x.makespan_ms)
        pool, job = r["pool"].makespan_ms, r["job"].makespan_ms
        ratio = pool / best.makespan_ms
        ok &= pool < best.makespan_ms < job and 0.70 <= ratio <= 0.95
        parts.append(f"s{seed}: pool {pool / 1000:.0f}s < clustered {best.makespan_ms / 1000:.0f}s < job {job / 1000:.0f}s, ratio {ratio:.3f}")
    parts.append(f"wall {wall:.0f}s")
    assert record(1, "pool < best clustered < job, ratio in [0.70, 0.95]", ok, "; ".join(parts))


def test_2_job_collapse(reference_runs):
    runs, _ = reference_runs
    ok, parts = True, []
    for seed, r in runs.items():
        res = r["job"]
        cap = res.slot_capacity
        lo, hi = parallel_window(res)
        util = mean_running(res.trace, lo, hi) / cap
        near = stall_intervals(res.trace, 60_000, below=math.ceil(0.1 * cap))
        ok &= util < 0.5 and bool(near)
        parts.append(f"s{seed}: mean {util:.0%} of {cap}, {len(near)} intervals <10% for >=60s")
    assert record(2, "job model under 50% with a (near-)stall", ok, "; ".join(parts))


def test_3_clustering_stall(reference_runs):
    runs, _ = reference_runs
    ok, parts = True, []
    for seed, r in runs.items():
        hits = []
        for res in r["grid"]:
            windows = [(w["first_ready"], w["last_completed"]) for t, w in res.stages.items() if t in MONTAGE_PARALLEL_TYPES]
            for a, b in stall_intervals(res.trace, 60_000):
                in_stage = any(a < hi and b > lo for lo, hi in windows)
                if 60_000 <= b - a <= 150_000 and in_stage:
                    pods = backoff_pending_during(res.trace, a, b, 4)
                    if pods:
                        hits.append((res.name, (b - a) // 1000, len(pods)))
        ok &= bool(hits)
        shown = ", ".join(f"{n.split('-n')[0]} {s}s/{p} pods" for n, s, p in hits[:2])
        parts.append(f"s{seed}: {len(hits)} gaps ({shown})")
    assert record(3, "60-150 s stall with attempts>=4 pods pending", ok, "; ".join(parts))


def test_4_pool_saturation(reference_runs):
    runs, _ = reference_runs
    ok, parts = True, []
    for seed, r in runs.items():
        res = r["pool"]
        cap = res.slot_capacity
        series = running_series(res.trace)
        peak = max(v for _, v in series)
        d = res.stages["mDiffFit"]
        lo, hi = d["first_start"], d["last_completed"]
        high = [(t, 1.0 if v >= 0.9 * cap else 0.0) for t, v in series]
        frac = integrate(high, lo, hi) / (hi - lo)
        ok &= peak == cap == 68 and frac >= 0.5
        parts.append(f"s{seed}: peak {peak}/{cap}, >=90% for {frac:.0%} of mDiffFit")
    assert record(4, "worker pools reach 68 and hold >=90% over half of mDiffFit", ok, "; ".join(parts))


def test_5_proportional_allocation():
    exact = desired_replicas([PoolMetrics("A", 100, 0, 0), PoolMetrics("B", 300, 0, 0)], 68) == {"A": 17, "B": 51}
    rng = random.Random(5)
    lr_bad = final_bad = unexplained = bound_by_min_one = tested = 0
    for _ in range(1000):
        slots = rng.choice((68, rng.randint(1, 300)))
        demands = {f"p{i}": rng.randint(0, 5000) for i in range(rng.randint(2, 6))}
        total = sum(demands.values())
        if total <= slots:
            continue
        tested += 1
        lr = largest_remainder(demands, slots)
        out = apportion(demands, slots)
        min_one = any(v and lr[p] == 0 for p, v in demands.items())
        bound_by_min_one += min_one
        for p, v in demands.items():
            if v < slots:
                continue
            target = Fraction(v, total)
            lr_bad += abs(Fraction(lr[p], slots) - target) > Fraction(1, slots)
            if abs(Fraction(out[p], slots) - target) > Fraction(1, slots):
                final_bad += 1
                # only the at-least-one rule may push a pool past the bound
                unexplained += not min_one
    ok = exact and lr_bad == 0 and unexplained == 0
    measured = (
        f"100:300 on 68 -> 17/51 {exact}; {tested} over-subscribed vectors, largest-remainder violations {lr_bad}; "
        f"min-one rule active in {bound_by_min_one}, final allocation off by >1/S for a big pool in {final_bad} ({unexplained} without it)"
    )
    assert record(5, "17/51 split and largest-remainder 1/S bound", ok, measured)


def redraw(dag: WorkflowDag, seed: int) -> WorkflowDag:
    rng = random.Random(seed)
    tasks = [TaskSpec(t.id, t.task_type, rng.randint(0, 40) * 250, t.cpu_request_millicores, t.mem_request_mb, t.parents) for t in dag.tasks]
    return WorkflowDag(dag.name, tasks)


def test_6_size_one_equivalence():
    t0 = time.perf_counter()
    same = total = 0
    for i in range(50):
        shape = random_dag(random.Random(600 + i), 100)
        for seed in range(1, 6):
            dag = redraw(shape, seed * 1000 + i)
            cluster = ClusterConfig(node_count=1 + i % 3)
            rule = ClusteringRule(TYPES, 1, random.Random(seed).randint(0, 10_000))
            a = run(SimConfig("eq", dag, cluster, seed=seed))
            b = run(SimConfig("eq", dag, cluster, ExecutionModelConfig(clustering=[rule]), seed=seed))
            same += a.trace_hash() == b.trace_hash()
            total += 1
    wall = time.perf_counter() - t0
    assert record(6, "ClusteredJob(size=1) trace hash == Job trace hash", same == total and wall < 60, f"{same}/{total} equal, {wall:.1f}s")


def random_scenario(i: int) -> SimConfig:
    rng = random.Random(7000 + i)
    dag = random_dag(rng, 80, f"fuzz{i}")
    cluster = ClusterConfig(
        node_count=rng.randint(1, 4),
        cpu_m=rng.choice((2000, 4000, 8000)),
        mem_mb=rng.choice((4096, 16384)),
        backoff=BackoffPolicy(rng.choice((1000, 5000)), rng.choice((1, 2, 3)), rng.choice((20_000, 300_000))),
        admission_rate_per_s=rng.choice((0, 5, 20)),
        admission_burst=rng.choice((1, 40)),
        pod_overhead_ms=rng.choice((0, 2000)),
    )
    kind = ("job", "clustered", "pool", "hybrid")[i % 4]
    types = list(TYPES)
    rng.shuffle(types)
    if kind == "job":
        model = ExecutionModelConfig()
    elif kind == "clustered":
        model = ExecutionModelConfig(clustering=[ClusteringRule(tuple(types[:2]), rng.randint(1, 8), rng.choice((0, 500, 3000)))])
    else:
        chosen = types if kind == "pool" else types[:1]
        model = ExecutionModelConfig(
            default="job",
            pools=[
                PoolSpec(t, rng.choice((500, 1000)), 2048, min_replicas=rng.choice((0, 0, 1)), max_replicas=rng.choice((None, 3)))
                for t in chosen
            ],
            dequeue_latency_ms=rng.choice((0, 100)),
        )
    scaler = ScalerConfig(rng.choice((1000, 15_000)), rng.choice((0, 60_000)), *rng.choice(((None, None), (4, 100))))
    return SimConfig(f"fuzz{i}-{kind}", dag, cluster, model, scaler, seed=i, check_invariants=True)


def audit_trace(cfg: SimConfig, res) -> list[str]:
    problems = []
    dag = cfg.workflow
    nodes = {n.id: n for n in cfg.cluster.nodes()}
    cpu = {n: 0 for n in nodes}
    mem = {n: 0 for n in nodes}
    held: dict[str, tuple[str, int, int]] = {}
    done: dict[str, int] = {}
    created: set[str] = set()
    started: dict[str, int] = {}
    for e in res.trace:
        if e.kind == "PodScheduled":
            f = dict(kv.split("=") for kv in e.detail.split())
            c, m = int(f["cpu_m"]), int(f["mem_mb"])
            held[e.pod_id] = (e.node, c, m)
            cpu[e.node] += c
            mem[e.node] += m
            if cpu[e.node] > nodes[e.node].cpu_capacity_millicores or mem[e.node] > nodes[e.node].mem_capacity_mb:
                problems.append(f"over-allocation on {e.node} at {e.time_ms}")
        elif e.kind in ("PodCompleted", "PodTerminated") and e.pod_id in held:
            n, c, m = held.pop(e.pod_id)
            cpu[n] -= c
            mem[n] -= m
        elif e.kind == "PodCreated":
            created.add(e.pod_id)
        elif e.kind == "TaskStarted":
            started[e.task_id] = started.get(e.task_id, 0) + 1
            if e.pod_id not in created:
                problems.append(f"{e.task_id} started before its pod existed")
            late = [p for p in dag[e.task_id].parents if p not in done]
            if late:
                problems.append(f"{e.task_id} started before parent {late[0]}")
        elif e.kind == "TaskCompleted":
            if e.task_id in done:
                problems.append(f"{e.task_id} completed twice")
            done[e.task_id] = e.time_ms
    if set(done) != {t.id for t in dag.tasks} or any(n != 1 for n in started.values()):
        problems.append("not exactly once")
    work = sum(t.runtime_ms for t in dag.tasks)
    if integrate(running_series(res.trace), 0, res.makespan_ms + 1) != work or executed_work(res.trace) != work:
        problems.append("integral of running tasks differs from total runtime")
    return problems


def min_replicas_block(cfg: SimConfig) -> bool:
    """True if the pools' minimum workers leave no room for some other pod on a one-node cluster."""
    if cfg.cluster.node_count != 1:
        return False
    pools = cfg.model.pools
    floor_cpu = sum(p.min_replicas * p.cpu_request_millicores for p in pools)
    floor_mem = sum(p.min_replicas * p.mem_request_mb for p in pools)
    pooled = {p.task_type for p in pools}
    others = [(t.cpu_request_millicores, t.mem_request_mb) for t in cfg.workflow.tasks if t.task_type not in pooled]
    others += [(p.cpu_request_millicores, p.mem_request_mb) for p in pools]
    return any(floor_cpu + c > cfg.cluster.cpu_m or floor_mem + m > cfg.cluster.mem_mb for c, m in others)


def test_7_invariant_fuzz():
    t0 = time.perf_counter()
    failures, completed, infeasible = [], 0, 0
    for i in range(400):
        cfg = random_scenario(i)
        try:
            res = run(cfg)
        except DeadlockError as exc:
            # a reported deadlock is correct only when the config cannot make progress
            if min_replicas_block(cfg):
                infeasible += 1
            else:
                failures.append(f"{cfg.name}: {exc}")
            continue
        except Exception as exc:  # any other crash is a fuzz failure
            failures.append(f"{cfg.name}: {exc}")
            continue
        completed += 1
        failures += [f"{cfg.name}: {p}" for p in audit_trace(cfg, res)]
    wall = time.perf_counter() - t0
    ok = not failures and completed >= 200 and wall < 300
    measured = (
        f"400 scenarios (100 per job/clustered/pool/hybrid): {completed} completed and audited, "
        f"{infeasible} infeasible min-replica configs reported as deadlock, {len(failures)} violations, {wall:.1f}s"
    )
    if failures:
        measured += f"; first: {failures[0]}"
    assert record(7, "over-allocation, causality, exactly-once, work conservation", ok, measured)


def scenario_hashes() -> dict[str, str]:
    out = {}
    for path in sorted((ROOT / "scenarios").glob("*.json")):
        out[path.stem] = run(load_scenario(path).to_sim_config()).trace_hash()
    return out


def test_8_determinism():
    first, second = scenario_hashes(), scenario_hashes()
    golden = json.loads(GOLDEN.read_text())
    repeat_ok = first == second
    golden_ok = first == golden
    measured = f"{len(first)} scenarios; repeat identical {repeat_ok}; match recorded hashes {golden_ok}"
    if not golden_ok:
        measured += f" (differs: {sorted(k for k in first if first[k] != golden.get(k))})"
    assert record(8, "checked-in scenarios reproduce bit-identical traces", repeat_ok and golden_ok, measured)


def test_9_backoff_arithmetic():
    got = [backoff_delay(a) // 1000 for a in range(1, 11)]
    want = [5, 10, 20, 40, 80, 160, 300, 300, 300, 300]
    assert record(9, "backoff_delay(1..10) in seconds", got == want, str(got))


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-q"]))
