"""Post-processing of simulation traces.

Task events carry the task type in ``detail``; ``PodScheduled`` carries the
pod's requests as ``cpu_m=<n> mem_mb=<n>`` and ``PodPending`` carries
``attempts=<n> next=<ms>``.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
from bisect import bisect_right
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence

CSV_COLUMNS = ("time_ms", "kind", "task_id", "pod_id", "pool", "node", "detail")
FORMATS = ("csv", "json", "gantt-image", "utilization-image")


class TraceError(ValueError):
    pass


class TraceEvent(NamedTuple):
    time_ms: int
    kind: str
    task_id: str = ""
    pod_id: str = ""
    pool: str = ""
    node: str = ""
    detail: str = ""


@dataclass(frozen=True)
class UtilizationSample:
    time_ms: int
    running_tasks: int
    allocated_fraction: float


def _detail_fields(detail: str) -> dict[str, str]:
    out = {}
    for part in detail.split():
        if "=" in part:
            k, v = part.split("=", 1)
            out[k] = v
    return out


def makespan(trace: Sequence[TraceEvent]) -> int:
    if not trace:
        raise TraceError("empty trace")
    ready = [e for e in trace if e.kind == "TaskReady"]
    done = [e for e in trace if e.kind == "TaskCompleted"]
    if not ready:
        raise TraceError("trace has no TaskReady events")
    missing = {e.task_id for e in ready} - {e.task_id for e in done}
    if missing:
        raise TraceError(f"incomplete trace: {len(missing)} tasks never completed, e.g. {min(missing)!r}")
    return max(e.time_ms for e in done) - min(e.time_ms for e in ready)


def running_series(trace: Iterable[TraceEvent]) -> list[tuple[int, int]]:
    """Exact step function ``[(t, running from t on)]`` at change points."""
    deltas: dict[int, int] = {}
    for e in trace:
        if e.kind == "TaskStarted":
            deltas[e.time_ms] = deltas.get(e.time_ms, 0) + 1
        elif e.kind == "TaskCompleted":
            deltas[e.time_ms] = deltas.get(e.time_ms, 0) - 1
    out = []
    running = 0
    for t in sorted(deltas):
        if deltas[t]:
            running += deltas[t]
            out.append((t, running))
    return out


def value_at(series: Sequence[tuple[int, float]], t: int) -> float:
    i = bisect_right(series, (t, float("inf"))) - 1
    return series[i][1] if i >= 0 else 0


def allocation_series(trace: Iterable[TraceEvent]) -> list[tuple[int, int]]:
    """Step function of allocated CPU millicores."""
    req: dict[str, int] = {}
    deltas: dict[int, int] = {}
    for e in trace:
        if e.kind == "PodScheduled":
            cpu = int(_detail_fields(e.detail).get("cpu_m", 0))
            req[e.pod_id] = cpu
            deltas[e.time_ms] = deltas.get(e.time_ms, 0) + cpu
        elif e.kind in ("PodCompleted", "PodTerminated") and e.pod_id in req:
            deltas[e.time_ms] = deltas.get(e.time_ms, 0) - req.pop(e.pod_id)
    out, alloc = [], 0
    for t in sorted(deltas):
        if deltas[t]:
            alloc += deltas[t]
            out.append((t, alloc))
    return out


def utilization_series(
    trace: Sequence[TraceEvent], step_ms: int, total_cpu_m: int | None = None, end_ms: int | None = None
) -> list[UtilizationSample]:
    """Samples every ``step_ms`` from 0 through the last event (or ``end_ms``)."""
    if step_ms <= 0:
        raise ValueError("step_ms must be > 0")
    series = running_series(trace)
    alloc = allocation_series(trace) if total_cpu_m else []
    if end_ms is None:
        end_ms = max((e.time_ms for e in trace), default=0)
    out = []
    for t in range(0, end_ms + 1, step_ms):
        frac = value_at(alloc, t) / total_cpu_m if total_cpu_m else 0.0
        out.append(UtilizationSample(t, int(value_at(series, t)), frac))
    return out


def integrate(series: Sequence[tuple[int, float]], start: int, end: int) -> float:
    """Integral of a step function over ``[start, end)``."""
    if end <= start:
        return 0.0
    total = 0.0
    cur = value_at(series, start)
    t = start
    i = bisect_right(series, (start, float("inf")))
    while i < len(series) and series[i][0] < end:
        total += cur * (series[i][0] - t)
        t, cur = series[i]
        i += 1
    return total + cur * (end - t)


def mean_running(trace: Sequence[TraceEvent], start: int, end: int) -> float:
    if end <= start:
        return 0.0
    return integrate(running_series(trace), start, end) / (end - start)


def waiting_series(trace: Iterable[TraceEvent]) -> list[tuple[int, int]]:
    """Step function of tasks that are ready but not yet started."""
    deltas: dict[int, int] = {}
    for e in trace:
        if e.kind == "TaskReady":
            deltas[e.time_ms] = deltas.get(e.time_ms, 0) + 1
        elif e.kind == "TaskStarted":
            deltas[e.time_ms] = deltas.get(e.time_ms, 0) - 1
    out, n = [], 0
    for t in sorted(deltas):
        if deltas[t]:
            n += deltas[t]
            out.append((t, n))
    return out


def stall_intervals(trace: Sequence[TraceEvent], min_gap_ms: int, below: int = 1) -> list[tuple[int, int]]:
    """Maximal intervals with fewer than ``below`` running tasks while ready work waits.

    The default ``below=1`` finds full stalls (nothing running).
    """
    if min_gap_ms <= 0:
        raise ValueError("min_gap_ms must be > 0")
    run = running_series(trace)
    wait = waiting_series(trace)
    times = sorted({t for t, _ in run} | {t for t, _ in wait})
    out = []
    start = None
    for t in times:
        low = value_at(run, t) < below and value_at(wait, t) > 0
        if low and start is None:
            start = t
        elif not low and start is not None:
            if t - start >= min_gap_ms:
                out.append((start, t))
            start = None
    return out


def backoff_pending_during(trace: Sequence[TraceEvent], start: int, end: int, min_attempts: int) -> list[str]:
    """Pods left Pending across ``[start, end)`` after ``min_attempts`` or more failed placements."""
    pending: dict[str, tuple[int, int]] = {}  # pod -> (since, attempts)
    spans: list[tuple[str, int, int, int]] = []
    for e in trace:
        if e.kind == "PodPending":
            pending[e.pod_id] = (e.time_ms, int(_detail_fields(e.detail)["attempts"]))
        elif e.kind in ("PodScheduled", "PodTerminated", "PodUnschedulable") and e.pod_id in pending:
            since, att = pending.pop(e.pod_id)
            spans.append((e.pod_id, since, e.time_ms, att))
    end_of_trace = max((e.time_ms for e in trace), default=0)
    for pod, (since, att) in pending.items():
        spans.append((pod, since, end_of_trace, att))
    hits = set()
    for pod, since, until, att in spans:
        if att >= min_attempts and since < end and until > start:
            hits.add(pod)
    return sorted(hits)


def stage_windows(trace: Iterable[TraceEvent]) -> dict[str, dict[str, int]]:
    """Per task type: first ready, first start, last completion and count."""
    out: dict[str, dict[str, int]] = {}
    for e in trace:
        if not e.kind.startswith("Task") or not e.detail:
            continue
        w = out.setdefault(e.detail, {"first_ready": e.time_ms, "first_start": -1, "last_completed": -1, "count": 0})
        if e.kind == "TaskReady":
            w["first_ready"] = min(w["first_ready"], e.time_ms)
            w["count"] += 1
        elif e.kind == "TaskStarted" and w["first_start"] < 0:
            w["first_start"] = e.time_ms
        elif e.kind == "TaskCompleted":
            w["last_completed"] = max(w["last_completed"], e.time_ms)
    return out


def gantt_rows(trace: Iterable[TraceEvent]) -> list[tuple[str, str, int, int]]:
    """``(task_id, task_type, start, end)`` ordered by start time."""
    starts: dict[str, tuple[str, int]] = {}
    rows = []
    for e in trace:
        if e.kind == "TaskStarted":
            starts[e.task_id] = (e.detail, e.time_ms)
        elif e.kind == "TaskCompleted" and e.task_id in starts:
            ttype, s = starts.pop(e.task_id)
            rows.append((e.task_id, ttype, s, e.time_ms))
    rows.sort(key=lambda r: (r[2], r[3], r[0]))
    return rows


def executed_work(trace: Iterable[TraceEvent]) -> int:
    return sum(end - start for _, _, start, end in gantt_rows(trace))


def trace_to_csv(trace: Iterable[TraceEvent]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    w.writerows(trace)
    return buf.getvalue()


def trace_from_csv(text: str) -> list[TraceEvent]:
    rows = csv.reader(io.StringIO(text))
    header = next(rows)
    if tuple(header) != CSV_COLUMNS:
        raise TraceError(f"unexpected CSV header {header}")
    return [TraceEvent(int(r[0]), *r[1:]) for r in rows]


def trace_hash(trace: Iterable[TraceEvent]) -> str:
    return hashlib.sha256(trace_to_csv(trace).encode()).hexdigest()


def summary(result) -> dict:
    """JSON-friendly digest of a ``SimResult``."""
    trace = result.trace
    return {
        "name": result.name,
        "makespan_ms": result.makespan_ms,
        "tasks": result.task_count,
        "slot_capacity": result.slot_capacity,
        "peak_running": max((r for _, r in running_series(trace)), default=0),
        "mean_running": round(mean_running(trace, 0, result.makespan_ms), 3) if result.makespan_ms else 0.0,
        "pods_created": sum(1 for e in trace if e.kind == "PodScheduled"),
        "stalls_60s": stall_intervals(trace, 60_000),
        "stages": stage_windows(trace),
        "trace_sha256": trace_hash(trace),
    }


TYPE_COLORS = {
    "mProject": "#1f77b4",
    "mDiffFit": "#ff7f0e",
    "mConcatFit": "#2ca02c",
    "mBgModel": "#d62728",
    "mBackground": "#9467bd",
    "mImgtbl": "#8c564b",
    "mAdd": "#e377c2",
    "mShrink": "#7f7f7f",
    "mJPEG": "#bcbd22",
}


def _color(ttype: str, palette: dict[str, str]) -> str:
    if ttype not in palette:
        import matplotlib

        cycle = matplotlib.rcParams["axes.prop_cycle"].by_key()["color"]
        palette[ttype] = cycle[len(palette) % len(cycle)]
    return palette[ttype]


def _plt():
    import matplotlib

    matplotlib.use("Agg")
    matplotlib.rcParams["svg.hashsalt"] = "kubewf"
    import matplotlib.pyplot as plt

    return plt


def plot_utilization(ax, trace, slot_capacity: int | None = None, title: str | None = None) -> None:
    series = running_series(trace)
    if series:
        xs = [0] + [t / 1000 for t, _ in series]
        ys = [0] + [r for _, r in series]
        ax.step(xs, ys, where="post", color="#333333", linewidth=0.8)
        ax.fill_between(xs, ys, step="post", alpha=0.3, color="#1f77b4")
    if slot_capacity:
        ax.axhline(slot_capacity, color="#d62728", linestyle="--", linewidth=0.8)
    ax.set_xlabel("time [s]")
    ax.set_ylabel("running tasks")
    if title:
        ax.set_title(title)


def render_gantt(trace: Sequence[TraceEvent], path: str, slot_capacity: int | None = None, title: str | None = None) -> None:
    plt = _plt()
    rows = gantt_rows(trace)
    fig, (ax, ax2) = plt.subplots(
        2, 1, figsize=(10, 7), sharex=True, gridspec_kw={"height_ratios": [3, 1]}
    )
    palette = dict(TYPE_COLORS)
    by_type: dict[str, list[tuple[int, float, float]]] = {}
    for i, (_, ttype, s, e) in enumerate(rows):
        by_type.setdefault(ttype, []).append((i, s / 1000, e / 1000))
    for ttype, segs in by_type.items():
        ax.hlines(
            [y for y, _, _ in segs],
            [s for _, s, _ in segs],
            [e for _, _, e in segs],
            colors=_color(ttype, palette),
            linewidth=max(0.3, min(4.0, 300 / max(len(rows), 1))),
            label=ttype,
        )
    ax.set_ylabel("task")
    ax.invert_yaxis()
    if by_type:
        ax.legend(loc="upper right", fontsize="small")
    if title:
        ax.set_title(title)
    plot_utilization(ax2, trace, slot_capacity)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def render_utilization(trace: Sequence[TraceEvent], path: str, slot_capacity: int | None = None, title: str | None = None) -> None:
    plt = _plt()
    fig, ax = plt.subplots(figsize=(10, 3))
    plot_utilization(ax, trace, slot_capacity, title)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def export(result, fmt: str, path: str | os.PathLike) -> str:
    """Write ``result`` (a SimResult or a bare trace) in ``fmt`` to ``path``."""
    if fmt not in FORMATS:
        raise ValueError(f"unknown export format {fmt!r}; expected one of {', '.join(FORMATS)}")
    trace = getattr(result, "trace", result)
    capacity = getattr(result, "slot_capacity", None)
    name = getattr(result, "name", None)
    path = os.fspath(path)
    if fmt == "csv":
        with open(path, "w", newline="") as fh:
            fh.write(trace_to_csv(trace))
    elif fmt == "json":
        doc = summary(result) if hasattr(result, "trace") else {}
        doc["trace"] = [list(e) for e in trace]
        with open(path, "w") as fh:
            json.dump(doc, fh, indent=1, sort_keys=True)
            fh.write("\n")
    elif fmt == "gantt-image":
        render_gantt(trace, path, capacity, name)
    else:
        render_utilization(trace, path, capacity, name)
    return path
