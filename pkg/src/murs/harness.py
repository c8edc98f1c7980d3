"""Experiment runner: execute scenarios under one or more policies and report.

A run produces one machine-readable JSON report per policy (identical seeds
across policies, so only the scheduler differs) plus a flat CSV of per-task
rows for external plotting. Reports carry everything the evaluation needs:
per-task timing, attributed collection pauses, spills, peak memory,
suspension intervals, per-job completion times, the collection log, the
scheduler's decision log, and the sampled rate series.

An out-of-memory outcome is a recorded result, not a process failure;
configuration problems raise ConfigError (nonzero exit in the CLI).
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import replace

from .engine import EngineConfig, RunResult, Worker
from .heap import HeapConfig
from .sched import Policy, Scheduler, SchedulerConfig
from .workloads import (
    ConfigError,
    ScenarioSpec,
    compile_scenario,
    load_scenario,
)

REPORT_VERSION = 1


def run_scenario(
    scenario: ScenarioSpec,
    policy: Policy,
    seed: int | None = None,
    heap_bytes: int | None = None,
    yellow: float | None = None,
    red: float | None = None,
    scratch_dir: str | None = None,
) -> tuple[dict, RunResult]:
    """Execute one scenario under one policy; returns (report, raw result)."""
    heap_cfg = scenario.heap
    if heap_bytes is not None:
        heap_cfg = replace(heap_cfg, total_bytes=heap_bytes)
    if yellow is not None:
        heap_cfg = replace(heap_cfg, yellow=yellow)
    if red is not None:
        heap_cfg = replace(heap_cfg, red=red)
    engine_cfg = scenario.engine
    if scratch_dir is not None:
        engine_cfg = replace(engine_cfg, scratch_dir=scratch_dir)
    programs = compile_scenario(scenario, policy, seed)
    scheduler = Scheduler(
        SchedulerConfig(
            policy=policy,
            yellow=heap_cfg.yellow,
            red=heap_cfg.red,
            fair_pool_weights=scenario.fair_pool_weights,
        )
    )
    worker = Worker(heap_cfg, engine_cfg, scheduler, programs)
    result = worker.run()
    report = build_report(scenario, policy, seed, heap_cfg, engine_cfg, result)
    return report, result


def build_report(
    scenario: ScenarioSpec,
    policy: Policy,
    seed: int | None,
    heap_cfg: HeapConfig,
    engine_cfg: EngineConfig,
    result: RunResult,
) -> dict:
    tasks = []
    for task in result.tasks:
        tasks.append({
            "task_id": task.task_id,
            "job": task.job_id,
            "stage": task.stage_idx,
            "index": task.index,
            "state": task.state.value,
            "start_ns": task.start_ns,
            "end_ns": task.end_ns,
            "exec_ns": max(0, task.end_ns - task.start_ns),
            "gc_attr_ns": task.gc_attr_ns,
            "suspended_ns": task.suspended_ns,
            "suspension_intervals": [list(t) for t in task.suspension_intervals],
            "spill_count": task.spill_count,
            "spilled_bytes": task.spilled_bytes,
            "peak_consumption_bytes": task.metrics.peak_consumption_bytes,
            "processed_records": task.processed_records,
            "processed_bytes": task.processed_bytes,
            "total_records": task.total_records,
            "total_bytes": task.total_bytes,
        })

    stages: dict[tuple[str, int], dict] = {}
    for task in result.tasks:
        key = (task.job_id, task.stage_idx)
        slot = stages.setdefault(
            key,
            {"job": task.job_id, "stage": task.stage_idx, "tasks": 0,
             "start_ns": task.start_ns, "end_ns": task.end_ns},
        )
        slot["tasks"] += 1
        slot["start_ns"] = min(slot["start_ns"], task.start_ns)
        slot["end_ns"] = max(slot["end_ns"], task.end_ns)
    per_stage = [stages[k] for k in sorted(stages)]

    jobs = {}
    for job_id, job in sorted(result.jobs.items()):
        jobs[job_id] = {
            "submitted_ns": job.submitted_ns,
            "end_ns": job.end_ns,
            "completion_ns": max(0, job.end_ns - job.submitted_ns) if job.done else None,
            "completed": job.done,
            "stages": len(job.program.stage_plans),
            "cached_bytes": job.cached_bytes,
        }

    decision_log = [
        {
            "time_ns": d.time_ns,
            "action": d.action,
            "tasks": list(d.task_ids),
            "reason": d.reason,
            "queue_len": d.queue_len,
        }
        for d in result.scheduler.state.decision_log
    ]
    gc_log = [
        {
            "kind": e.kind.value,
            "promoted_or_reclaimed_bytes": e.promoted_or_reclaimed_bytes,
            "pause_ns": e.pause_ns,
            "heap_usage_after": round(e.heap_usage_after, 9),
            "long_living_fraction_after": round(e.long_living_fraction_after, 9),
            "time_ns": e.time_ns,
        }
        for e in result.heap.gc_log
    ]
    rate_series = {
        str(task.task_id): [[t, round(r, 9)] for t, r in task.metrics.rate_history]
        for task in result.tasks
        if task.metrics.rate_history
    }

    spill_tasks = sorted({s.owner_task for s in result.spill_files if s.bytes_spilled})
    suspensions = [d for d in decision_log if d["action"] == "suspend"]
    max_susp = max((t["suspended_ns"] for t in tasks), default=0)

    return {
        "report_version": REPORT_VERSION,
        "scenario": scenario.name,
        "policy": policy.value,
        "seed": scenario.seed if seed is None else seed,
        "config": {
            "heap_bytes": heap_cfg.total_bytes,
            "young_fraction": heap_cfg.young_fraction,
            "yellow": heap_cfg.yellow,
            "red": heap_cfg.red,
            "slots": engine_cfg.slots,
            "sample_period": engine_cfg.sample_period,
        },
        "outcome": {
            "ome": result.ome,
            "ome_ns": result.ome_ns,
            "total_virtual_ns": result.end_ns,
            "total_steps": result.total_steps,
            "cumulative_gc_pause_ns": result.heap.cumulative_gc_pause_ns,
            "minor_gcs": sum(1 for e in result.heap.gc_log if e.kind.value == "minor"),
            "full_gcs": sum(1 for e in result.heap.gc_log if e.kind.value == "full"),
            "total_spills": len([s for s in result.spill_files if s.bytes_spilled]),
            "spill_tasks": len(spill_tasks),
            "spilled_bytes": sum(s.bytes_spilled for s in result.spill_files),
            "suspension_count": len(suspensions),
            "max_suspension_ns": max_susp,
            "min_active_tasks": result.min_active_tasks,
            "safety_resumes": result.safety_resumes,
        },
        "jobs": jobs,
        "per_stage": per_stage,
        "tasks": tasks,
        "decision_log": decision_log,
        "gc_log": gc_log,
        "rate_series": rate_series,
        "active_series": [[t, n] for t, n in result.active_series],
    }


def compare(report_a: dict, report_b: dict) -> dict:
    """Headline deltas of run B relative to run A (reduction = (a-b)/a)."""

    def reduction(a: float, b: float) -> float:
        if a == 0:
            return 0.0
        return round(100.0 * (a - b) / a, 6)

    out_a, out_b = report_a["outcome"], report_b["outcome"]
    job_time_reduction = {}
    for job, a_info in report_a["jobs"].items():
        b_info = report_b["jobs"].get(job)
        if b_info is None:
            continue
        a_time = a_info["completion_ns"]
        b_time = b_info["completion_ns"]
        if a_time and b_time:
            job_time_reduction[job] = reduction(a_time, b_time)
    return {
        "a": {"scenario": report_a["scenario"], "policy": report_a["policy"]},
        "b": {"scenario": report_b["scenario"], "policy": report_b["policy"]},
        "total_time_reduction_pct": reduction(
            out_a["total_virtual_ns"], out_b["total_virtual_ns"]
        ),
        "gc_pause_reduction_pct": reduction(
            out_a["cumulative_gc_pause_ns"], out_b["cumulative_gc_pause_ns"]
        ),
        "spill_tasks_reduction_pct": reduction(
            out_a["spill_tasks"], out_b["spill_tasks"]
        ),
        "spills_reduction_pct": reduction(
            out_a["total_spills"], out_b["total_spills"]
        ),
        "spilled_bytes_reduction_pct": reduction(
            out_a["spilled_bytes"], out_b["spilled_bytes"]
        ),
        "job_time_reduction_pct": job_time_reduction,
        "ome_a": out_a["ome"],
        "ome_b": out_b["ome"],
        "scalability_win": bool(out_a["ome"] and not out_b["ome"]),
    }


def save_report(report: dict, path: str) -> None:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report, fh, sort_keys=True, indent=1)
        fh.write("\n")


def load_report(path: str) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def export_tasks_csv(report: dict, path: str) -> None:
    fields = [
        "task_id", "job", "stage", "index", "state", "start_ns", "end_ns",
        "exec_ns", "gc_attr_ns", "suspended_ns", "spill_count", "spilled_bytes",
        "peak_consumption_bytes", "processed_records", "processed_bytes",
        "total_records", "total_bytes",
    ]
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields, extrasaction="ignore")
        writer.writeheader()
        for row in report["tasks"]:
            writer.writerow(row)


def run(
    scenario_ref: str | ScenarioSpec,
    policies: list[Policy],
    out_dir: str | None = None,
    seed: int | None = None,
    heap_bytes: int | None = None,
    yellow: float | None = None,
    red: float | None = None,
) -> dict[str, dict]:
    """Run a scenario under each policy; optionally write reports and CSVs.

    Returns policy-name -> report. Identical seeds across policies so only
    the scheduler differs.
    """
    scenario = (
        scenario_ref
        if isinstance(scenario_ref, ScenarioSpec)
        else load_scenario(scenario_ref)
    )
    reports: dict[str, dict] = {}
    for policy in policies:
        scratch = None
        if out_dir is not None:
            scratch = os.path.join(out_dir, f"spills-{scenario.name}-{policy.value}")
        report, _ = run_scenario(
            scenario, policy, seed=seed, heap_bytes=heap_bytes,
            yellow=yellow, red=red, scratch_dir=scratch,
        )
        reports[policy.value] = report
        if out_dir is not None:
            base = os.path.join(out_dir, f"report-{scenario.name}-{policy.value}")
            save_report(report, base + ".json")
            export_tasks_csv(report, base + "-tasks.csv")
    return reports
