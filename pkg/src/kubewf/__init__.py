"""Discrete-event simulation of workflow execution models on a Kubernetes-like cluster."""

from .autoscaler import ScalerConfig, apportion, desired_replicas
from .cluster import BackoffPolicy, Cluster, ClusterConfig, PodSpec, backoff_delay
from .execmodels import ClusteringRule, ExecutionModelConfig, Mode, PoolSpec
from .metrics import TraceEvent, export, makespan, stall_intervals, trace_hash, utilization_series
from .scenario import Scenario, load_scenario
from .simulator import DeadlockError, SimConfig, SimResult, SimulationError, run, run_suite
from .workflow import MontageParams, TaskSpec, WorkflowDag, WorkflowError, generate_montage, load_workflow

__version__ = "0.1.0"

__all__ = [
    "BackoffPolicy",
    "Cluster",
    "ClusterConfig",
    "ClusteringRule",
    "DeadlockError",
    "ExecutionModelConfig",
    "Mode",
    "MontageParams",
    "PodSpec",
    "PoolSpec",
    "ScalerConfig",
    "Scenario",
    "SimConfig",
    "SimResult",
    "SimulationError",
    "TaskSpec",
    "TraceEvent",
    "WorkflowDag",
    "WorkflowError",
    "apportion",
    "backoff_delay",
    "desired_replicas",
    "export",
    "generate_montage",
    "load_scenario",
    "load_workflow",
    "makespan",
    "run",
    "run_suite",
    "stall_intervals",
    "trace_hash",
    "utilization_series",
]
