"""Benchmark-analogue jobs, multi-job scenarios, and the reference runner.

Four built-in jobs cover the four growth behaviors:

* ``sq`` - scan query: one all-constant filter stage, light.
* ``aq`` - aggregation query: flatMap fan-out into an aggregating shuffle
  write (heavy in the first stage's write phase), then a light merge stage.
* ``sort`` - dedup plus sort: an aggregating dedup write, a relay merge
  stage, and a buffering sorted read in the last stage (heavy read phase).
* ``pr`` - iterative rank analogue over a clustered edge-like dataset: a
  caching prep stage, then per-iteration grouping read (join-like, linear),
  map, and aggregating write; the cache is re-read every iteration.

Scenarios bundle jobs with a heap and engine configuration sized so that the
combined live data crosses the pressure thresholds at desk scale. The
``reference_job_outputs`` runner replays a job's dataflow single-threaded
with pure folds - no heap, no buffers, no spills, no scheduling - and is the
output-equivalence oracle for every scheduled run.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Any

import yaml

from . import ops
from .apimodel import (
    ApiCatalogEntry,
    MemoryModel,
    PhaseAffinity,
    SemanticsError,
    catalog_lookup,
    task_model_sequence,
)
from .engine import (
    EngineConfig,
    JobProgram,
    ReadKind,
    StagePlan,
    WriteKind,
    partition_records,
)
from .heap import HeapConfig
from .kvdata import Dataset, DatasetSpec, KeyPattern, Record, mix64, split_dataset
from .ops import FilterParams, FlatMapParams, MapParams
from .sched import Policy


class ConfigError(ValueError):
    """Raised for malformed job or scenario definitions."""


@dataclass(frozen=True)
class JobSpec:
    name: str
    dataset: DatasetSpec
    stages: tuple[tuple[str, ...], ...]
    tasks_per_stage: int = 4
    iterations: int = 0
    cache_after_stage: int | None = None
    reread_cache_stages: tuple[int, ...] = ()
    op_params: dict[str, dict[str, Any]] = field(default_factory=dict)
    compute_ns_per_byte: float | None = None

    def validate(self) -> None:
        self.dataset.validate()
        if not self.stages:
            raise ConfigError(f"job {self.name!r} has no stages")
        if self.tasks_per_stage < 1:
            raise ConfigError(f"job {self.name!r}: tasks_per_stage must be >= 1")
        for idx in self.reread_cache_stages:
            if self.cache_after_stage is None or idx <= self.cache_after_stage:
                raise ConfigError(
                    f"job {self.name!r}: stage {idx} cannot re-read a cache "
                    "built at or after it"
                )


@dataclass(frozen=True)
class JobSubmission:
    job: JobSpec
    submit_ns: int = 0
    submit_after: tuple[str, int] | None = None

    def validate(self) -> None:
        self.job.validate()
        if self.submit_ns < 0:
            raise ConfigError("submit_ns must be non-negative")


@dataclass(frozen=True)
class ScenarioSpec:
    name: str
    jobs: tuple[JobSubmission, ...]
    heap: HeapConfig
    engine: EngineConfig = EngineConfig()
    seed: int = 1
    fair_pool_weights: dict[str, int] | None = None

    def validate(self) -> None:
        if not self.jobs:
            raise ConfigError("a scenario needs at least one job")
        names = [s.job.name for s in self.jobs]
        if len(set(names)) != len(names):
            raise ConfigError("job names within a scenario must be unique")
        self.heap.validate()
        self.engine.validate()
        for submission in self.jobs:
            submission.validate()
            after = submission.submit_after
            if after is not None:
                target, stage = after
                if target not in names or target == submission.job.name:
                    raise ConfigError(
                        f"submit_after references unknown job {target!r}"
                    )
                if stage < 0:
                    raise ConfigError("submit_after stage must be >= 0")


# -- stage compilation ---------------------------------------------------------

_READ_KIND_BY_API = {
    "sortByKey": ReadKind.SORT_BUFFER,
    "join": ReadKind.GROUP,
    "groupByKey": ReadKind.GROUP,
    "reduceByKey": ReadKind.AGG_MERGE,
    "distinct": ReadKind.DISTINCT_MERGE,
}

_WRITE_KIND_BY_API = {
    "reduceByKey": WriteKind.AGG,
    "distinct": WriteKind.DISTINCT,
    "groupByKey": WriteKind.GROUP,
}


def _process_op(entry: ApiCatalogEntry, params: dict[str, Any]):
    name = entry.name
    if name == "map":
        return ("map", MapParams(**params))
    if name == "filter":
        return ("filter", FilterParams(**params))
    if name == "flatMap":
        return ("flatmap", FlatMapParams(**params))
    raise ConfigError(f"API {name!r} cannot appear in a process phase")


def _split_pipeline(
    entries: list[ApiCatalogEntry],
) -> tuple[ApiCatalogEntry | None, list[ApiCatalogEntry], ApiCatalogEntry | None]:
    """Resolve head/tail shuffle placement; middles must be process APIs."""
    head: ApiCatalogEntry | None = None
    tail: ApiCatalogEntry | None = None
    body = list(entries)
    if len(body) == 1 and body[0].is_shuffle:
        if body[0].phase_affinity is PhaseAffinity.READ:
            head = body[0]
        else:
            tail = body[0]
        body = []
    else:
        if body and body[0].is_shuffle:
            head = body[0]
            body = body[1:]
        if body and body[-1].is_shuffle:
            tail = body[-1]
            body = body[:-1]
    for entry in body:
        if entry.is_shuffle:
            raise ConfigError(
                f"shuffle API {entry.name!r} in the middle of a pipeline"
            )
    return head, body, tail


def compile_job(
    spec: JobSpec,
    scenario_seed: int,
    job_index: int,
    engine_cfg: EngineConfig,
    submit_ns: int = 0,
    submit_after: tuple[str, int] | None = None,
    weight: int = 1,
) -> JobProgram:
    """Compile a JobSpec into an executable program of stage plans."""
    spec.validate()
    dataset_seed = mix64(scenario_seed, job_index, spec.dataset.seed)
    dataset = Dataset(
        replace(spec.dataset, seed=dataset_seed),
        engine_cfg.record_overhead_bytes,
    )
    plans: list[StagePlan] = []
    boundary: ApiCatalogEntry | None = None   # upstream tail shuffle
    last = len(spec.stages) - 1
    for stage_idx, names in enumerate(spec.stages):
        entries = [catalog_lookup(name) for name in names]
        head, body, tail = _split_pipeline(entries)
        if head is not None:
            read_kind = _READ_KIND_BY_API[head.name]
        elif stage_idx > 0 and boundary is not None:
            read_kind = _READ_KIND_BY_API[boundary.name]
        else:
            read_kind = ReadKind.PASS
        process = tuple(
            _process_op(entry, spec.op_params.get(entry.name, {}))
            for entry in body
        )
        if tail is not None:
            if tail.phase_affinity is PhaseAffinity.READ:
                # The buffer of this shuffle lives on the downstream read side.
                write_kind = WriteKind.PARTITION
            else:
                write_kind = _WRITE_KIND_BY_API[tail.name]
        else:
            write_kind = WriteKind.COLLECT if stage_idx == last else WriteKind.PARTITION
        plans.append(
            StagePlan(
                read_kind=read_kind,
                process=process,
                write_kind=write_kind,
                caches=spec.cache_after_stage == stage_idx,
                reread_cache=stage_idx in spec.reread_cache_stages,
                compute_ns_per_byte=spec.compute_ns_per_byte,
            )
        )
        boundary = tail
    return JobProgram(
        job_id=spec.name,
        dataset=dataset,
        stage_plans=tuple(plans),
        tasks_per_stage=spec.tasks_per_stage,
        submit_ns=submit_ns,
        submit_after=submit_after,
        weight=weight,
    )


def job_model_sequences(spec: JobSpec) -> list[list[MemoryModel]]:
    """Per-stage memory-model sequences for a job's nonempty pipelines."""
    sequences = []
    for stage_idx, names in enumerate(spec.stages):
        if not names:
            sequences.append([])
            continue
        entries = [catalog_lookup(name) for name in names]
        sequences.append(
            task_model_sequence(
                entries,
                caches=spec.cache_after_stage == stage_idx,
                key_pattern=spec.dataset.key_pattern,
            )
        )
    return sequences


# -- reference runner ----------------------------------------------------------

def _reference_stage(
    records: list[Record],
    plan: StagePlan,
    cfg: EngineConfig,
    cache_sink: list[Record] | None,
) -> list[Record]:
    overhead = cfg.record_overhead_bytes
    entry_overhead = cfg.entry_overhead_bytes

    if plan.read_kind is ReadKind.PASS:
        stream = records
    elif plan.read_kind is ReadKind.SORT_BUFFER:
        stream = sorted(records, key=lambda r: (r.key, r.value, r.size_bytes))
    elif plan.read_kind is ReadKind.AGG_MERGE:
        merged: dict[int, int] = {}
        for r in records:
            merged[r.key] = merged[r.key] ^ r.value if r.key in merged else r.value
        stream = [ops.agg_output_record(k, v, overhead) for k, v in merged.items()]
    elif plan.read_kind is ReadKind.DISTINCT_MERGE:
        sizes: dict[int, int] = {}
        for r in records:
            if sizes.get(r.key, -1) < r.size_bytes:
                sizes[r.key] = r.size_bytes
        stream = [Record(k, ops.distinct_token(k), s) for k, s in sizes.items()]
    else:  # GROUP
        groups: dict[int, list[int]] = {}
        for r in records:
            member = ops.group_member_bytes(r, overhead, entry_overhead)
            entry = groups.get(r.key)
            if entry is None:
                groups[r.key] = [r.value, member]
            else:
                entry[0] ^= r.value
                entry[1] += member
        stream = [
            ops.group_output_record(k, token, member_bytes, overhead)
            for k, (token, member_bytes) in groups.items()
        ]

    processed: list[Record] = []
    for rec in stream:
        batch = [rec]
        for op_name, params in plan.process:
            produced: list[Record] = []
            for r in batch:
                if op_name == "map":
                    produced.append(ops.map_record(r, params))
                elif op_name == "filter":
                    if ops.filter_keeps(r, params):
                        produced.append(r)
                else:
                    produced.extend(ops.flatmap_children(r, params, overhead))
            batch = produced
        processed.extend(batch)

    if plan.caches and cache_sink is not None:
        cache_sink.extend(ops.cache_record(r) for r in processed)

    write = plan.write_kind
    if write is WriteKind.COLLECT or write is WriteKind.PARTITION:
        return processed
    if write is WriteKind.AGG:
        agg: dict[int, int] = {}
        for r in processed:
            agg[r.key] = agg[r.key] ^ r.value if r.key in agg else r.value
        return [ops.agg_output_record(k, v, overhead) for k, v in agg.items()]
    if write is WriteKind.DISTINCT:
        held: dict[int, int] = {}
        for r in processed:
            if held.get(r.key, -1) < r.size_bytes:
                held[r.key] = r.size_bytes
        return [Record(k, ops.distinct_token(k), s) for k, s in held.items()]
    out_groups: dict[int, list[int]] = {}
    for r in processed:
        member = ops.group_member_bytes(r, overhead, entry_overhead)
        entry = out_groups.get(r.key)
        if entry is None:
            out_groups[r.key] = [r.value, member]
        else:
            entry[0] ^= r.value
            entry[1] += member
    return [
        ops.group_output_record(k, token, member_bytes, overhead)
        for k, (token, member_bytes) in out_groups.items()
    ]


def reference_job_outputs(program: JobProgram, cfg: EngineConfig) -> Counter:
    """Final output multiset of a job, replayed single-threaded.

    Mirrors the job's dataflow (same partition routing, same per-stage task
    counts) but runs every partition straight through the pure operator folds
    with no heap, no suspension, and no spilling. Any scheduled execution
    must produce exactly this multiset.
    """
    n = program.tasks_per_stage
    cache_records: list[Record] = []
    parts: list[list[Record]] = [
        list(program.dataset.iter_split(split))
        for split in split_dataset(program.dataset, n)
    ]
    outputs: list[list[Record]] = []
    for stage_idx, plan in enumerate(program.stage_plans):
        if stage_idx > 0:
            upstream: list[Record] = []
            for part_output in outputs:
                upstream.extend(part_output)
            source = cache_records + upstream if plan.reread_cache else upstream
            parts = partition_records(source, n)
        sink = cache_records if plan.caches else None
        outputs = [_reference_stage(part, plan, cfg, sink) for part in parts]
    final: Counter = Counter()
    for part_output in outputs:
        final.update(part_output)
    return final


# -- built-in jobs and scenarios -------------------------------------------------

def builtin_jobs() -> dict[str, JobSpec]:
    """The four benchmark-analogue jobs at their default desk-scale sizes."""
    sq = JobSpec(
        name="sq",
        dataset=DatasetSpec(100_000, 50_000, KeyPattern.RANDOM, 56, seed=11),
        stages=(("filter",),),
        tasks_per_stage=6,
        op_params={"filter": {"keep_percent": 50}},
    )
    aq = JobSpec(
        name="aq",
        dataset=DatasetSpec(90_000, 60_000, KeyPattern.RANDOM, 56, seed=13),
        stages=(("flatMap", "reduceByKey"), ()),
        tasks_per_stage=6,
        op_params={
            "flatMap": {"fanout": 3, "child_value_bytes": 8, "key_cardinality": 30_000}
        },
    )
    sort = JobSpec(
        name="sort",
        dataset=DatasetSpec(72_000, 60_000, KeyPattern.RANDOM, 120, seed=17),
        stages=(("distinct",), (), ("sortByKey",)),
        tasks_per_stage=6,
    )
    iteration = ("groupByKey", "map", "reduceByKey")
    pr = JobSpec(
        name="pr",
        dataset=DatasetSpec(60_000, 3_000, KeyPattern.CLUSTERED, 56, seed=19),
        stages=(("map",),) + (iteration,) * 5,
        tasks_per_stage=6,
        iterations=5,
        cache_after_stage=0,
        reread_cache_stages=(1, 2, 3, 4, 5),
    )
    return {"sq": sq, "aq": aq, "sort": sort, "pr": pr}


_MB = 1024 * 1024


def _heap(total_mb: float) -> HeapConfig:
    return HeapConfig(total_bytes=int(total_mb * _MB))


def builtin_scenarios() -> dict[str, ScenarioSpec]:
    """Named multi-job scenarios sized to force heap pressure at desk scale."""
    jobs = builtin_jobs()
    engine = EngineConfig(slots=6)
    scenarios = {
        "sq-solo": ScenarioSpec(
            name="sq-solo",
            jobs=(JobSubmission(jobs["sq"]),),
            heap=_heap(64),
            engine=engine,
            seed=101,
        ),
        "sort-sq": ScenarioSpec(
            name="sort-sq",
            jobs=(JobSubmission(jobs["sort"]), JobSubmission(jobs["sq"])),
            heap=_heap(14),
            engine=engine,
            seed=103,
        ),
        "aq-sq": ScenarioSpec(
            name="aq-sq",
            jobs=(JobSubmission(jobs["aq"]), JobSubmission(jobs["sq"])),
            heap=_heap(10),
            engine=engine,
            seed=105,
        ),
        "three-way": ScenarioSpec(
            name="three-way",
            jobs=(
                JobSubmission(jobs["sort"]),
                JobSubmission(jobs["aq"]),
                JobSubmission(jobs["sq"]),
            ),
            heap=_heap(18),
            engine=engine,
            seed=107,
        ),
        "three-way-small-heap": ScenarioSpec(
            name="three-way-small-heap",
            jobs=(
                JobSubmission(jobs["sort"]),
                JobSubmission(jobs["aq"]),
                JobSubmission(jobs["sq"]),
            ),
            heap=_heap(12),
            engine=engine,
            seed=107,
        ),
        "cache-co-run": ScenarioSpec(
            name="cache-co-run",
            jobs=(
                JobSubmission(jobs["pr"]),
                JobSubmission(jobs["aq"], submit_after=("pr", 2)),
            ),
            heap=_heap(16),
            engine=engine,
            seed=109,
        ),
    }
    return scenarios


def compile_scenario(
    scenario: ScenarioSpec,
    policy: Policy,
    seed: int | None = None,
) -> list[JobProgram]:
    """Compile every job of a scenario; the policy does not affect programs."""
    scenario.validate()
    effective_seed = scenario.seed if seed is None else seed
    programs = []
    for index, submission in enumerate(scenario.jobs):
        programs.append(
            compile_job(
                submission.job,
                effective_seed,
                index,
                scenario.engine,
                submit_ns=submission.submit_ns,
                submit_after=submission.submit_after,
                weight=(scenario.fair_pool_weights or {}).get(submission.job.name, 1),
            )
        )
    return programs


# -- scenario files --------------------------------------------------------------

def scenario_to_dict(scenario: ScenarioSpec) -> dict:
    def job_dict(sub: JobSubmission) -> dict:
        spec = sub.job
        out: dict[str, Any] = {
            "name": spec.name,
            "dataset": {
                "record_count": spec.dataset.record_count,
                "key_cardinality": spec.dataset.key_cardinality,
                "key_pattern": spec.dataset.key_pattern.value,
                "value_size_bytes": spec.dataset.value_size_bytes,
                "seed": spec.dataset.seed,
            },
            "stages": [list(stage) for stage in spec.stages],
            "tasks_per_stage": spec.tasks_per_stage,
        }
        if spec.iterations:
            out["iterations"] = spec.iterations
        if spec.cache_after_stage is not None:
            out["cache_after_stage"] = spec.cache_after_stage
        if spec.reread_cache_stages:
            out["reread_cache_stages"] = list(spec.reread_cache_stages)
        if spec.op_params:
            out["op_params"] = spec.op_params
        if spec.compute_ns_per_byte is not None:
            out["compute_ns_per_byte"] = spec.compute_ns_per_byte
        if sub.submit_ns:
            out["submit_ns"] = sub.submit_ns
        if sub.submit_after is not None:
            out["submit_after"] = {"job": sub.submit_after[0], "stage": sub.submit_after[1]}
        return out

    heap = scenario.heap
    engine = scenario.engine
    data: dict[str, Any] = {
        "name": scenario.name,
        "seed": scenario.seed,
        "heap": {
            "total_bytes": heap.total_bytes,
            "young_fraction": heap.young_fraction,
            "yellow": heap.yellow,
            "red": heap.red,
            "minor_pause_ns_per_surviving_byte": heap.minor_pause_ns_per_surviving_byte,
            "full_pause_ns_per_live_byte": heap.full_pause_ns_per_live_byte,
        },
        "engine": {
            "slots": engine.slots,
            "sample_period": engine.sample_period,
            "compute_ns_per_byte": engine.compute_ns_per_byte,
            "spill_ns_per_byte": engine.spill_ns_per_byte,
            "record_overhead_bytes": engine.record_overhead_bytes,
            "entry_overhead_bytes": engine.entry_overhead_bytes,
            "spill_min_bytes": engine.spill_min_bytes,
            "rate_window": engine.rate_window,
            "trend_eps": engine.trend_eps,
        },
        "jobs": [job_dict(sub) for sub in scenario.jobs],
    }
    if scenario.fair_pool_weights:
        data["fair_pool_weights"] = dict(scenario.fair_pool_weights)
    return data


def _require(mapping: dict, key: str, context: str):
    if key not in mapping:
        raise ConfigError(f"{context}: missing required key {key!r}")
    return mapping[key]


def scenario_from_dict(data: dict) -> ScenarioSpec:
    try:
        name = _require(data, "name", "scenario")
        jobs_data = _require(data, "jobs", "scenario")
        heap_data = dict(_require(data, "heap", "scenario"))
        engine_data = dict(data.get("engine", {}))
        submissions = []
        for job_data in jobs_data:
            context = f"job {job_data.get('name', '?')!r}"
            ds = dict(_require(job_data, "dataset", context))
            pattern = KeyPattern(ds.pop("key_pattern", "random"))
            dataset = DatasetSpec(
                record_count=int(_require(ds, "record_count", context)),
                key_cardinality=int(_require(ds, "key_cardinality", context)),
                key_pattern=pattern,
                value_size_bytes=int(_require(ds, "value_size_bytes", context)),
                seed=int(ds.get("seed", 1)),
            )
            stages = tuple(
                tuple(stage) for stage in _require(job_data, "stages", context)
            )
            submit_after = None
            if "submit_after" in job_data:
                trigger = job_data["submit_after"]
                submit_after = (
                    str(_require(trigger, "job", context)),
                    int(_require(trigger, "stage", context)),
                )
            spec = JobSpec(
                name=str(_require(job_data, "name", "job")),
                dataset=dataset,
                stages=stages,
                tasks_per_stage=int(job_data.get("tasks_per_stage", 4)),
                iterations=int(job_data.get("iterations", 0)),
                cache_after_stage=job_data.get("cache_after_stage"),
                reread_cache_stages=tuple(job_data.get("reread_cache_stages", ())),
                op_params=dict(job_data.get("op_params", {})),
                compute_ns_per_byte=job_data.get("compute_ns_per_byte"),
            )
            submissions.append(
                JobSubmission(
                    job=spec,
                    submit_ns=int(job_data.get("submit_ns", 0)),
                    submit_after=submit_after,
                )
            )
        scenario = ScenarioSpec(
            name=str(name),
            jobs=tuple(submissions),
            heap=HeapConfig(**heap_data),
            engine=EngineConfig(**engine_data) if engine_data else EngineConfig(),
            seed=int(data.get("seed", 1)),
            fair_pool_weights=data.get("fair_pool_weights"),
        )
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"invalid scenario definition: {exc}") from exc
    scenario.validate()
    return scenario


def save_scenario(scenario: ScenarioSpec, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(scenario_to_dict(scenario), fh, sort_keys=False)


def load_scenario(name_or_path: str) -> ScenarioSpec:
    """Load a scenario by built-in name or from a YAML file."""
    builtins = builtin_scenarios()
    if name_or_path in builtins:
        return builtins[name_or_path]
    try:
        with open(name_or_path, "r", encoding="utf-8") as fh:
            data = yaml.safe_load(fh)
    except FileNotFoundError:
        raise ConfigError(
            f"{name_or_path!r} is neither a built-in scenario "
            f"({', '.join(sorted(builtins))}) nor a readable file"
        ) from None
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f" at line {mark.line + 1}, column {mark.column + 1}" if mark else ""
        raise ConfigError(f"invalid YAML in {name_or_path}{where}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{name_or_path}: scenario file must be a mapping")
    return scenario_from_dict(data)
