"""Scenario files: one JSON document describing a complete simulation.

Example::

    {
      "name": "hybrid-pools",
      "seed": 1,
      "workflow": {"montage": {"n_inputs": 3200}},
      "cluster": {"nodes": {"count": 17, "cpu_m": 4000, "mem_mb": 16384},
                  "backoff": {"initial_ms": 5000, "factor": 2, "cap_ms": 300000},
                  "admission": {"rate_per_s": 20, "burst": 40},
                  "pod_overhead_ms": 2000},
      "model": {"default": "job", "modes": {},
                "clustering": [{"matchTask": ["mProject"], "size": 5, "timeoutMs": 3000}]},
      "scaler": {"interval_ms": 15000, "stabilization_ms": 60000,
                 "pools": [{"type": "mDiffFit", "cpu_m": 1000, "mem_mb": 2048, "min": 0, "max": null}]}
    }

``workflow`` is either ``{"path": "..."}`` (relative to the scenario file)
or ``{"montage": {...}}`` generator parameters.  Every block except
``workflow`` is optional; ``dump_scenario`` always writes the fully
expanded form, which loads back to an equal ``Scenario``.
"""

from __future__ import annotations

import copy
import json
import os
from dataclasses import dataclass, field
from typing import Any

import jsonschema

from .autoscaler import ScalerConfig
from .cluster import ClusterConfig
from .execmodels import ExecutionModelConfig, PoolSpec, parse_clustering_rules
from .simulator import SimConfig
from .workflow import (
    DEFAULT_CPU_M,
    DEFAULT_MEM_MB,
    DEFAULT_RUNTIMES_MS,
    MontageParams,
    RuntimeModel,
    WorkflowDag,
    generate_montage,
    load_workflow,
)


class ScenarioError(ValueError):
    """Invalid scenario; ``path`` is the dotted location of the bad field."""

    def __init__(self, message: str, path: str = ""):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


_INT0 = {"type": "integer", "minimum": 0}
_INT1 = {"type": "integer", "minimum": 1}

SCHEMA: dict[str, Any] = {
    "type": "object",
    "required": ["workflow"],
    "additionalProperties": False,
    "properties": {
        "name": {"type": "string"},
        "seed": {"type": "integer"},
        "trace": {"enum": ["full", "compact"]},
        "max_sim_time_ms": _INT1,
        "workflow": {
            "type": "object",
            "additionalProperties": False,
            "minProperties": 1,
            "maxProperties": 1,
            "properties": {
                "path": {"type": "string"},
                "montage": {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["n_inputs"],
                    "properties": {
                        "n_inputs": {"type": "integer", "minimum": 4},
                        "runtimes": {
                            "type": "object",
                            "additionalProperties": {
                                "type": "object",
                                "additionalProperties": False,
                                "required": ["mean_ms"],
                                "properties": {
                                    "mean_ms": _INT0,
                                    "jitter": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                                },
                            },
                        },
                        "requests": {
                            "type": "object",
                            "additionalProperties": {
                                "type": "object",
                                "additionalProperties": False,
                                "properties": {"cpu_m": _INT1, "mem_mb": _INT1},
                            },
                        },
                    },
                },
            },
        },
        "cluster": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "nodes": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {"count": _INT1, "cpu_m": _INT1, "mem_mb": _INT1},
                },
                "backoff": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "initial_ms": _INT1,
                        "factor": {"type": "number", "minimum": 1},
                        "cap_ms": _INT1,
                    },
                },
                "admission": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {"rate_per_s": {"type": "number", "minimum": 0}, "burst": _INT1},
                },
                "pod_overhead_ms": _INT0,
            },
        },
        "model": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "default": {"enum": ["job", "clustered", "pool", None]},
                "modes": {"type": "object", "additionalProperties": {"enum": ["job", "clustered", "pool"]}},
                "clustering": {
                    "type": "array",
                    "items": {
                        "type": "object",
                        "additionalProperties": False,
                        "required": ["matchTask", "size"],
                        "properties": {
                            "matchTask": {
                                "oneOf": [
                                    {"type": "string"},
                                    {"type": "array", "items": {"type": "string"}, "minItems": 1},
                                ]
                            },
                            "size": _INT1,
                            "timeoutMs": _INT0,
                        },
                    },
                },
                "engine_latency_ms": _INT0,
                "dequeue_latency_ms": _INT0,
            },
        },
        "scaler": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "interval_ms": _INT1,
                "stabilization_ms": _INT0,
                "scale_up_pods": {"type": ["integer", "null"], "minimum": 1},
                "scale_up_percent": {"type": ["integer", "null"], "minimum": 1},
                "pools": {
                    "type": "array",
                    "items": {
                        "type": "object",
                        "additionalProperties": False,
                        "required": ["type"],
                        "properties": {
                            "type": {"type": "string"},
                            "cpu_m": _INT1,
                            "mem_mb": _INT1,
                            "overhead_ms": _INT0,
                            "min": _INT0,
                            "max": {"type": ["integer", "null"], "minimum": 0},
                        },
                    },
                },
            },
        },
    },
}


def _dotted(path) -> str:
    out = ""
    for p in path:
        out += f"[{p}]" if isinstance(p, int) else (f".{p}" if out else str(p))
    return out or "<root>"


def validate_document(doc: Any) -> None:
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: (len(e.absolute_path), list(map(str, e.absolute_path))))
    if errors:
        err = errors[0]
        raise ScenarioError(err.message, _dotted(err.absolute_path))
    cap = doc.get("cluster", {}).get("backoff", {})
    if "cap_ms" in cap and cap["cap_ms"] < cap.get("initial_ms", 5000):
        raise ScenarioError("cap_ms must be >= initial_ms", "cluster.backoff.cap_ms")


@dataclass
class Scenario:
    name: str
    workflow: dict
    seed: int = 1
    cluster: ClusterConfig = field(default_factory=ClusterConfig)
    model: ExecutionModelConfig = field(default_factory=ExecutionModelConfig)
    scaler: ScalerConfig = field(default_factory=ScalerConfig)
    trace: str = "full"
    max_sim_time_ms: int = 24 * 3600 * 1000
    base_dir: str = field(default=".", compare=False)

    def to_dict(self) -> dict:
        model = self.model.to_dict()
        return {
            "name": self.name,
            "seed": self.seed,
            "workflow": copy.deepcopy(self.workflow),
            "cluster": self.cluster.to_dict(),
            "model": model,
            "scaler": {
                "interval_ms": self.scaler.interval_ms,
                "stabilization_ms": self.scaler.scale_down_stabilization_ms,
                "scale_up_pods": self.scaler.scale_up_pods,
                "scale_up_percent": self.scaler.scale_up_percent,
                "pools": [p.to_dict() for p in self.model.pools],
            },
            "trace": self.trace,
            "max_sim_time_ms": self.max_sim_time_ms,
        }

    def montage_params(self) -> MontageParams | None:
        raw = self.workflow.get("montage")
        if raw is None:
            return None
        runtimes = {t: RuntimeModel(ms) for t, ms in DEFAULT_RUNTIMES_MS.items()}
        for t, rm in raw.get("runtimes", {}).items():
            runtimes[t] = RuntimeModel(rm["mean_ms"], rm.get("jitter", runtimes.get(t, RuntimeModel(0)).jitter_fraction))
        requests = {
            t: (r.get("cpu_m", DEFAULT_CPU_M), r.get("mem_mb", DEFAULT_MEM_MB)) for t, r in raw.get("requests", {}).items()
        }
        return MontageParams(raw["n_inputs"], self.seed, runtimes, requests)

    def load_dag(self) -> WorkflowDag:
        params = self.montage_params()
        if params is not None:
            return generate_montage(params)
        path = os.path.join(self.base_dir, self.workflow["path"])
        with open(path, "rb") as fh:
            return load_workflow(fh)

    def to_sim_config(self, dag: WorkflowDag | None = None, check_invariants: bool = False) -> SimConfig:
        return SimConfig(
            name=self.name,
            workflow=dag if dag is not None else self.load_dag(),
            cluster=self.cluster,
            model=self.model,
            scaler=self.scaler,
            seed=self.seed,
            trace_verbosity=self.trace,
            max_sim_time_ms=self.max_sim_time_ms,
            check_invariants=check_invariants,
        )


def scenario_from_dict(doc: Any, base_dir: str = ".") -> Scenario:
    validate_document(doc)
    model_doc = doc.get("model", {})
    scaler_doc = doc.get("scaler", {})
    try:
        pools = [PoolSpec.from_dict(p) for p in scaler_doc.get("pools", [])]
        model = ExecutionModelConfig(
            default=model_doc.get("default", "job"),
            modes=model_doc.get("modes", {}),
            clustering=parse_clustering_rules(model_doc.get("clustering", [])),
            pools=pools,
            engine_latency_ms=model_doc.get("engine_latency_ms", 0),
            dequeue_latency_ms=model_doc.get("dequeue_latency_ms", 0),
        )
    except ValueError as exc:
        raise ScenarioError(str(exc), "model") from exc
    cluster_doc = doc.get("cluster", {})
    try:
        cluster = ClusterConfig.from_dict(cluster_doc)
    except ValueError as exc:
        raise ScenarioError(str(exc), "cluster") from exc
    try:
        scaler = ScalerConfig(
            interval_ms=scaler_doc.get("interval_ms", 15_000),
            scale_down_stabilization_ms=scaler_doc.get("stabilization_ms", 60_000),
            scale_up_pods=scaler_doc.get("scale_up_pods"),
            scale_up_percent=scaler_doc.get("scale_up_percent"),
        )
    except ValueError as exc:
        raise ScenarioError(str(exc), "scaler") from exc
    return Scenario(
        name=doc.get("name", "scenario"),
        workflow=copy.deepcopy(doc["workflow"]),
        seed=doc.get("seed", 1),
        cluster=cluster,
        model=model,
        scaler=scaler,
        trace=doc.get("trace", "full"),
        max_sim_time_ms=doc.get("max_sim_time_ms", 24 * 3600 * 1000),
        base_dir=base_dir,
    )


def load_scenario(path: str | os.PathLike) -> Scenario:
    path = os.fspath(path)
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ScenarioError(f"not valid JSON ({exc})") from exc
    return scenario_from_dict(doc, os.path.dirname(os.path.abspath(path)))


def dumps_scenario(scenario: Scenario) -> str:
    return json.dumps(scenario.to_dict(), indent=2) + "\n"


def dump_scenario(scenario: Scenario, path: str | os.PathLike) -> None:
    with open(path, "w") as fh:
        fh.write(dumps_scenario(scenario))
