"""Command line interface.

Exit status: 0 ok, 2 invalid configuration, 3 simulation failure, 4 I/O error.
The default output directory can be overridden with ``KUBEWF_OUT``.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace

from . import experiments
from .execmodels import ModelError
from .metrics import (
    FORMATS,
    export,
    mean_running,
    plot_utilization,
    running_series,
    stall_intervals,
    trace_from_csv,
)
from .scenario import ScenarioError, load_scenario
from .simulator import DeadlockError, ScenarioError as RunFailure, SimulationError, run, run_suite
from .workflow import MontageParams, WorkflowError, dumps_workflow, generate_montage, load_workflow

EXIT_OK, EXIT_CONFIG, EXIT_SIM, EXIT_IO = 0, 2, 3, 4
DEFAULT_FORMATS = ("csv", "json", "gantt-image", "utilization-image")
FILE_NAMES = {
    "csv": "trace.csv",
    "json": "result.json",
    "gantt-image": "gantt.svg",
    "utilization-image": "utilization.svg",
}

log = logging.getLogger("kubewf")


class CliError(Exception):
    def __init__(self, message: str, status: int):
        super().__init__(message)
        self.status = status


def _out_dir(args) -> str:
    out = args.out or os.environ.get("KUBEWF_OUT") or "out"
    try:
        os.makedirs(out, exist_ok=True)
    except OSError as exc:
        raise CliError(f"cannot create output directory {out!r}: {exc}", EXIT_IO) from exc
    return out


def _formats(args) -> list[str]:
    if not args.format:
        return list(DEFAULT_FORMATS)
    fmts = [f.strip() for f in args.format.split(",") if f.strip()]
    bad = [f for f in fmts if f not in FORMATS]
    if bad:
        raise CliError(f"--format: unknown format {bad[0]!r} (choose from {', '.join(FORMATS)})", EXIT_CONFIG)
    return fmts


def _load(path: str, seed: int | None):
    try:
        sc = load_scenario(path)
    except ScenarioError as exc:
        raise CliError(f"{path}: {exc}", EXIT_CONFIG) from exc
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc}", EXIT_IO) from exc
    if seed is not None:
        sc = replace(sc, seed=seed)
    return sc


def _sim_config(sc):
    try:
        cfg = sc.to_sim_config()
        cfg.validate()
    except (WorkflowError, ModelError) as exc:
        raise CliError(f"scenario {sc.name!r}: {exc}", EXIT_CONFIG) from exc
    except OSError as exc:
        raise CliError(f"scenario {sc.name!r}: cannot read workflow: {exc}", EXIT_IO) from exc
    return cfg


def _write(result, out: str, fmts, prefix: str = "") -> None:
    for fmt in fmts:
        try:
            export(result, fmt, os.path.join(out, prefix + FILE_NAMES[fmt]))
        except OSError as exc:
            raise CliError(f"cannot write {fmt} output: {exc}", EXIT_IO) from exc


def _summary_line(result) -> str:
    peak = max((r for _, r in running_series(result.trace)), default=0)
    mean = mean_running(result.trace, 0, result.makespan_ms) if result.makespan_ms else 0.0
    return (
        f"{result.name}: makespan={result.makespan_ms / 1000:.1f}s "
        f"mean_running={mean:.1f} ({mean / result.slot_capacity:.0%} of {result.slot_capacity} slots) "
        f"peak={peak}/{result.slot_capacity}"
    )


def cmd_generate(args) -> int:
    if args.n < 4:
        raise CliError(f"--n must be >= 4, got {args.n}", EXIT_CONFIG)
    dag = generate_montage(MontageParams(args.n, args.seed if args.seed is not None else 1))
    out = args.out or os.path.join(os.environ.get("KUBEWF_OUT") or ".", f"montage-{args.n}.json")
    try:
        with open(out, "w") as fh:
            fh.write(dumps_workflow(dag))
    except OSError as exc:
        raise CliError(f"cannot write {out}: {exc}", EXIT_IO) from exc
    print(f"wrote {len(dag)} tasks to {out}")
    return EXIT_OK


def _simulate(cfg):
    try:
        return run(cfg)
    except DeadlockError as exc:
        stuck = ", ".join(list(exc.stuck)[:5])
        raise CliError(f"simulation of {cfg.name!r} failed: {exc} [stuck: {stuck}]", EXIT_SIM) from exc
    except SimulationError as exc:
        raise CliError(f"simulation of {cfg.name!r} failed: {exc}", EXIT_SIM) from exc


def cmd_run(args) -> int:
    fmts = _formats(args)
    sc = _load(args.scenario, args.seed)
    cfg = _sim_config(sc)
    out = _out_dir(args)
    result = _simulate(cfg)
    _write(result, out, fmts)
    print(_summary_line(result))
    return EXIT_OK


def _parse_ints(text: str, flag: str) -> list[int]:
    try:
        vals = [int(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise CliError(f"{flag}: expected comma-separated integers, got {text!r}", EXIT_CONFIG) from exc
    return vals


def _table(rows: list[dict], best: str | None) -> str:
    lines = ["scenario,size,timeout_ms,makespan_ms,mean_running,best"]
    for r in rows:
        lines.append(
            f"{r['scenario']},{r.get('size', '')},{r.get('timeout_ms', '')},{r['makespan_ms']},"
            f"{r['mean_running']:.2f},{'*' if r['scenario'] == best else ''}"
        )
    return "\n".join(lines) + "\n"


def cmd_sweep(args) -> int:
    sizes = _parse_ints(args.sizes, "--sizes")
    timeouts = _parse_ints(args.timeouts, "--timeouts")
    if not sizes or not timeouts:
        raise CliError("sweep grid is empty", EXIT_CONFIG)
    base = _load(args.scenario, args.seed)
    try:
        points = [(s, t, experiments.with_grid_point(base, s, t)) for s in sizes for t in timeouts]
    except ValueError as exc:
        raise CliError(str(exc), EXIT_CONFIG) from exc
    base_cfg = _sim_config(base)
    configs = [sc.to_sim_config(base_cfg.workflow) for _, _, sc in points]
    out = _out_dir(args)
    results = run_suite(configs, workers=args.jobs)
    rows = []
    failed = []
    for (size, timeout, sc), cfg in zip(points, configs):
        res = results[cfg.name]
        if isinstance(res, RunFailure):
            failed.append(f"{cfg.name}: {res.error}")
            continue
        rows.append(
            {
                "scenario": cfg.name,
                "size": size,
                "timeout_ms": timeout,
                "makespan_ms": res.makespan_ms,
                "mean_running": mean_running(res.trace, 0, res.makespan_ms),
            }
        )
        _write(res, out, [f for f in _formats(args) if f != "json"], prefix=f"{cfg.name}-")
    rows.sort(key=lambda r: (r["makespan_ms"], r["scenario"]))
    best = rows[0]["scenario"] if rows else None
    table = _table(rows, best)
    with open(os.path.join(out, "sweep.csv"), "w") as fh:
        fh.write(table)
    print(table, end="")
    for f in failed:
        print(f"FAILED {f}", file=sys.stderr)
    return EXIT_SIM if failed else EXIT_OK


def compare_report(results: dict, slot_capacity: int) -> dict:
    job = results["job"]
    clustered = results["clustered"]
    pool = results["pool"]
    report = {"models": {}}
    for key, res in results.items():
        report["models"][key] = {
            "scenario": res.name,
            "makespan_ms": res.makespan_ms,
            "mean_running": round(mean_running(res.trace, 0, res.makespan_ms), 3) if res.makespan_ms else 0.0,
            "stalls_60s": stall_intervals(res.trace, 60_000),
            "trace_sha256": res.trace_hash(),
        }
    report["ratio_pool_over_clustered"] = round(pool.makespan_ms / clustered.makespan_ms, 4) if clustered.makespan_ms else 1.0
    report["ratio_pool_over_job"] = round(pool.makespan_ms / job.makespan_ms, 4) if job.makespan_ms else 1.0
    report["slot_capacity"] = slot_capacity
    return report


def _restrict(sc, types: set[str]):
    """Drop clustering rules and pools for task types absent from the DAG."""
    rules = [
        replace(r, match_task=tuple(t for t in r.match_task if t in types))
        for r in sc.model.clustering
        if any(t in types for t in r.match_task)
    ]
    pools = [p for p in sc.model.pools if p.task_type in types]
    return replace(sc, model=replace(sc.model, clustering=rules, pools=pools))


def run_compare(workflow: dict, seed: int, workers: int = 1, n_label: int = 0) -> tuple[dict, dict]:
    """Run job, every documented clustered grid point and hybrid pools."""
    scenarios = [experiments.job_scenario(n_label, seed, workflow=workflow)]
    scenarios += experiments.clustered_grid(n_label, seed, workflow=workflow)
    scenarios.append(experiments.hybrid_pool_scenario(n_label, seed, workflow=workflow))
    dag = scenarios[0].load_dag()
    types = set(dag.task_types())
    cfgs = [_restrict(sc, types).to_sim_config(dag) for sc in scenarios]
    results = run_suite(cfgs, workers=workers)
    errors = {k: v for k, v in results.items() if isinstance(v, RunFailure)}
    if errors:
        raise CliError("; ".join(f"{k}: {v.error}" for k, v in errors.items()), EXIT_SIM)
    grid = {c.name: results[c.name] for c in cfgs[1:-1]}
    best = min(grid.values(), key=lambda r: (r.makespan_ms, r.name))
    chosen = {"job": results[cfgs[0].name], "clustered": best, "pool": results[cfgs[-1].name]}
    return chosen, grid


def cmd_compare(args) -> int:
    seed = args.seed if args.seed is not None else 1
    if args.workflow:
        workflow = {"path": os.path.abspath(args.workflow)}
        try:
            with open(args.workflow, "rb") as fh:
                load_workflow(fh)
        except WorkflowError as exc:
            raise CliError(f"{args.workflow}: {exc}", EXIT_CONFIG) from exc
        except OSError as exc:
            raise CliError(f"cannot read {args.workflow}: {exc}", EXIT_IO) from exc
        n_label = 0
    else:
        if args.n < 4:
            raise CliError(f"--n must be >= 4, got {args.n}", EXIT_CONFIG)
        workflow = {"montage": {"n_inputs": args.n}}
        n_label = args.n
    out = _out_dir(args)
    chosen, grid = run_compare(workflow, seed, args.jobs, n_label)
    capacity = chosen["job"].slot_capacity
    report = compare_report(chosen, capacity)
    report["clustered_grid"] = {name: r.makespan_ms for name, r in grid.items()}
    for key, res in chosen.items():
        _write(res, out, [f for f in _formats(args) if f in ("csv", "gantt-image")], prefix=f"{key}-")
    try:
        with open(os.path.join(out, "compare.json"), "w") as fh:
            json.dump(report, fh, indent=1, sort_keys=True)
            fh.write("\n")
        _side_by_side(chosen, capacity, os.path.join(out, "compare-utilization.svg"))
    except OSError as exc:
        raise CliError(f"cannot write report: {exc}", EXIT_IO) from exc
    for key in ("job", "clustered", "pool"):
        m = report["models"][key]
        flag = f" stalls={len(m['stalls_60s'])}" if m["stalls_60s"] else ""
        print(f"{key:9s} {m['scenario']}: makespan={m['makespan_ms'] / 1000:.1f}s{flag}")
    print(f"pool/clustered = {report['ratio_pool_over_clustered']:.3f}  pool/job = {report['ratio_pool_over_job']:.3f}")
    return EXIT_OK


def _side_by_side(results: dict, capacity: int, path: str) -> None:
    from .metrics import _plt

    plt = _plt()
    fig, axes = plt.subplots(1, 3, figsize=(15, 3.5), sharey=True)
    end = max(r.makespan_ms for r in results.values()) / 1000
    for ax, (key, res) in zip(axes, results.items()):
        plot_utilization(ax, res.trace, capacity, f"{key}: {res.makespan_ms / 1000:.0f} s")
        ax.set_xlim(0, end)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def cmd_plot(args) -> int:
    try:
        with open(args.trace) as fh:
            trace = trace_from_csv(fh.read())
    except OSError as exc:
        raise CliError(f"cannot read {args.trace}: {exc}", EXIT_IO) from exc
    except (ValueError, IndexError) as exc:
        raise CliError(f"{args.trace}: not a trace CSV ({exc})", EXIT_CONFIG) from exc
    out = _out_dir(args)
    stem = os.path.splitext(os.path.basename(args.trace))[0]
    fmts = [f for f in _formats(args) if f.endswith("image")] if args.format else ["gantt-image", "utilization-image"]
    for fmt in fmts:
        path = os.path.join(out, f"{stem}-{fmt.split('-')[0]}.svg")
        try:
            export(trace, fmt, path)
        except OSError as exc:
            raise CliError(f"cannot write {path}: {exc}", EXIT_IO) from exc
        print(path)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="override the scenario / generator seed")
    common.add_argument("--out", default=None, help="output file (generate) or directory (default $KUBEWF_OUT or ./out)")
    common.add_argument("--format", default=None, help=f"comma-separated subset of {','.join(FORMATS)}")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="kubewf", description="Workflow execution models on a simulated Kubernetes cluster")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", parents=[common], help="write a Montage-shaped workflow file")
    p.add_argument("--n", type=int, required=True, help="number of input images (5n tasks)")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("run", parents=[common], help="simulate one scenario file")
    p.add_argument("scenario")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", parents=[common], help="sweep clustering size/timeout over a clustered scenario")
    p.add_argument("scenario")
    p.add_argument("--sizes", default="5,20")
    p.add_argument("--timeouts", default="3000")
    p.add_argument("--jobs", type=int, default=1, help="scenarios to run in parallel")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("compare", parents=[common], help="job vs best clustered vs hybrid worker pools")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--workflow", help="workflow JSON file")
    src.add_argument("--n", type=int, default=3200, help="generate a Montage workflow with 5n tasks")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("plot", parents=[common], help="render charts from a trace CSV")
    p.add_argument("trace")
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.status


if __name__ == "__main__":
    sys.exit(main())
