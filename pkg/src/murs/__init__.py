"""Desk-scale key-value dataflow engine with a modeled managed heap and a
memory-usage-rate task scheduler, plus fair-share and FIFO baselines."""

from .apimodel import (
    ApiCatalogEntry,
    ApiSemantics,
    MemoryModel,
    ModelKind,
    OutputGrowth,
    PhaseAffinity,
    builtin_catalog,
    classify,
    task_model_sequence,
)
from .heap import (
    Allocation,
    AllocationKind,
    GcEvent,
    GcKind,
    HeapConfig,
    ManagedHeap,
    OutOfMemory,
    PressureLevel,
)
from .kvdata import Dataset, DatasetSpec, KeyPattern, Record, Split, generate, split_dataset
from .sampler import RateEstimate, Sampler, TaskMetrics, Trend, completion_percent, memory_usage_rate
from .sched import Policy, Scheduler, SchedulerConfig, TaskView, compute_spill, compute_suspend_tasks
from .workloads import (
    ConfigError,
    JobSpec,
    JobSubmission,
    ScenarioSpec,
    builtin_jobs,
    builtin_scenarios,
    load_scenario,
    reference_job_outputs,
    save_scenario,
)

__version__ = "0.1.0"

__all__ = [
    "ApiCatalogEntry", "ApiSemantics", "MemoryModel", "ModelKind", "OutputGrowth",
    "PhaseAffinity", "builtin_catalog", "classify", "task_model_sequence",
    "Allocation", "AllocationKind", "GcEvent", "GcKind", "HeapConfig",
    "ManagedHeap", "OutOfMemory", "PressureLevel",
    "Dataset", "DatasetSpec", "KeyPattern", "Record", "Split", "generate", "split_dataset",
    "RateEstimate", "Sampler", "TaskMetrics", "Trend", "completion_percent", "memory_usage_rate",
    "Policy", "Scheduler", "SchedulerConfig", "TaskView", "compute_spill", "compute_suspend_tasks",
    "ConfigError", "JobSpec", "JobSubmission", "ScenarioSpec", "builtin_jobs",
    "builtin_scenarios", "load_scenario", "reference_job_outputs", "save_scenario",
    "__version__",
]
