"""Record-granular task execution against the modeled heap.

One worker owns a heap, a fixed number of slots, and a deterministic
virtual-time event loop: at every turn the runnable task with the smallest
clock processes exactly one record through its read/process/write pipeline.
Pass-through operators cost temporary allocations; shuffle reads and writes
grow long-living buffers; caching process phases grow the job's cache. Each
task checks its suspend flag only at record boundaries (the interruptible
iterator contract), so a suspension freezes its heap footprint exactly.

Collection pauses are stop-the-world: they advance every running task's
clock and are attributed to all tasks co-resident at that moment. A task
whose memory consumption is on course to exceed its fair share of the heap
(total / running tasks) spills its buffers to scratch files at the next
record boundary; an allocation that cannot be satisfied even after a full
collection ends the whole run with an out-of-memory outcome.
"""

from __future__ import annotations

import enum
import os
from collections import deque
from dataclasses import dataclass, field
from typing import Iterator

from . import ops
from .heap import Allocation, AllocationKind, HeapConfig, ManagedHeap, OutOfMemory
from .heap import PressureLevel
from .kvdata import Dataset, Record, split_dataset, mix64
from .sampler import Sampler, TaskMetrics, completion_percent
from .sched import Policy, Scheduler, TaskView

_PARTITION_SALT = 0x77


class TaskState(enum.Enum):
    PENDING = "pending"
    RUNNING = "running"
    SUSPENDED = "suspended"
    SPILLING = "spilling"
    FINISHED = "finished"


class StepResult(enum.Enum):
    PROGRESSED = "progressed"
    SUSPENDED_AT_BOUNDARY = "suspended"
    FINISHED = "finished"
    SPILL_REQUESTED = "spilled"
    OUT_OF_MEMORY = "out_of_memory"


class ReadKind(enum.Enum):
    PASS = "pass"              # stream records straight into the pipeline
    AGG_MERGE = "agg_merge"    # combine partial aggregates by key
    DISTINCT_MERGE = "distinct_merge"  # dedup partials by key, record-sized
    GROUP = "group"            # collect values per key (join-like grouping)
    SORT_BUFFER = "sort"       # buffer everything, drain in key order


class WriteKind(enum.Enum):
    COLLECT = "collect"        # final stage: records become job outputs
    PARTITION = "partition"    # plain shuffle write, no buffer
    AGG = "agg"                # aggregating shuffle buffer, fixed-size entries
    DISTINCT = "distinct"      # dedup buffer keeping full record sizes
    GROUP = "group"            # non-aggregating (grouping) shuffle buffer


@dataclass(frozen=True)
class EngineConfig:
    slots: int = 4
    sample_period: int = 64
    compute_ns_per_byte: float = 8.0
    spill_ns_per_byte: float = 20.0
    record_overhead_bytes: int = 16
    entry_overhead_bytes: int = 16
    spill_min_bytes: int = 64 * 1024
    rate_window: int = 4
    trend_eps: float = 0.05
    scratch_dir: str | None = None

    def validate(self) -> None:
        if self.slots < 1:
            raise ValueError("slots must be >= 1")
        if self.sample_period < 1:
            raise ValueError("sample_period must be >= 1")


@dataclass(frozen=True)
class StagePlan:
    """Compiled execution plan for one stage's tasks."""

    read_kind: ReadKind
    process: tuple = ()            # ("map"|"filter"|"flatmap", params) tuples
    write_kind: WriteKind = WriteKind.COLLECT
    caches: bool = False
    reread_cache: bool = False
    compute_ns_per_byte: float | None = None

    @property
    def buffering_read(self) -> bool:
        return self.read_kind is not ReadKind.PASS


@dataclass(frozen=True)
class JobProgram:
    """A compiled job: dataset, one plan per stage, submission rule."""

    job_id: str
    dataset: Dataset
    stage_plans: tuple[StagePlan, ...]
    tasks_per_stage: int = 4
    submit_ns: int = 0
    submit_after: tuple[str, int] | None = None   # (job_id, stage_idx)
    weight: int = 1


@dataclass(frozen=True)
class SpillFile:
    owner_task: int
    bytes_spilled: int
    record_count: int
    time_ns: int
    path: str | None = None


class Task:
    """Runtime state of one task (engine-internal)."""

    __slots__ = (
        "task_id", "job_id", "stage_idx", "index", "plan",
        "state", "suspend_flag",
        "input_iter", "total_records", "total_bytes",
        "processed_records", "processed_bytes",
        "read_buf", "read_buf_bytes", "read_segments",
        "write_buf", "write_buf_bytes", "write_segments",
        "buffer_inputs", "spill_count", "spilled_bytes",
        "drain", "drain_pos",
        "outputs", "cached_unrolled",
        "next_ns", "start_ns", "end_ns",
        "gc_attr_ns", "suspended_ns", "suspend_observed_ns",
        "suspension_intervals", "metrics",
    )

    def __init__(self, task_id: int, job_id: str, stage_idx: int, index: int,
                 plan: StagePlan, records: Iterator[Record],
                 total_records: int, total_bytes: int):
        self.task_id = task_id
        self.job_id = job_id
        self.stage_idx = stage_idx
        self.index = index
        self.plan = plan
        self.state = TaskState.PENDING
        self.suspend_flag = False
        self.input_iter = records
        self.total_records = total_records
        self.total_bytes = total_bytes
        self.processed_records = 0
        self.processed_bytes = 0
        self.read_buf: dict | list = [] if plan.read_kind is ReadKind.SORT_BUFFER else {}
        self.read_buf_bytes = 0
        self.read_segments: list = []
        self.write_buf: dict = {}
        self.write_buf_bytes = 0
        self.write_segments: list = []
        self.buffer_inputs = 0
        self.spill_count = 0
        self.spilled_bytes = 0
        self.drain: list[Record] | None = None
        self.drain_pos = 0
        self.outputs: list[Record] = []
        self.cached_unrolled = 0
        self.next_ns = 0
        self.start_ns = 0
        self.end_ns = 0
        self.gc_attr_ns = 0
        self.suspended_ns = 0
        self.suspend_observed_ns = 0
        self.suspension_intervals: list[tuple[int, int]] = []
        self.metrics = TaskMetrics(
            task_id=task_id, total_records=total_records, total_bytes=total_bytes
        )

    @property
    def buffer_bytes(self) -> int:
        return self.read_buf_bytes + self.write_buf_bytes

    @property
    def consumption_bytes(self) -> int:
        return self.buffer_bytes + self.cached_unrolled

    @property
    def records_remaining(self) -> int:
        return self.total_records - self.processed_records


@dataclass
class JobState:
    program: JobProgram
    submitted_ns: int = 0
    stage_idx: int = -1
    stage_tasks: list[Task] = field(default_factory=list)
    finished_in_stage: int = 0
    cache_records: list[Record] = field(default_factory=list)
    cached_bytes: int = 0
    done: bool = False
    end_ns: int = 0

    @property
    def job_id(self) -> str:
        return self.program.job_id


@dataclass
class RunResult:
    policy: Policy
    tasks: list[Task]
    jobs: dict[str, JobState]
    heap: ManagedHeap
    scheduler: Scheduler
    spill_files: list[SpillFile]
    ome: bool
    ome_ns: int | None
    end_ns: int
    total_steps: int
    min_active_tasks: int
    active_series: list[tuple[int, int]]
    safety_resumes: int


def partition_records(records: list[Record], n: int) -> list[list[Record]]:
    """Route records to n partitions by key hash (same key, same partition)."""
    parts: list[list[Record]] = [[] for _ in range(n)]
    if n == 1:
        parts[0] = list(records)
        return parts
    for rec in records:
        parts[mix64(rec.key, _PARTITION_SALT) % n].append(rec)
    return parts


class Worker:
    """Single-worker engine loop executing a set of job programs."""

    def __init__(
        self,
        heap_config: HeapConfig,
        engine_config: EngineConfig,
        scheduler: Scheduler,
        programs: list[JobProgram],
    ):
        engine_config.validate()
        self.cfg = engine_config
        self.heap = ManagedHeap(heap_config)
        self.scheduler = scheduler
        self.sampler = Sampler(engine_config.rate_window, engine_config.trend_eps)
        self.programs = list(programs)
        self.jobs: dict[str, JobState] = {
            p.job_id: JobState(program=p) for p in programs
        }
        if len(self.jobs) != len(programs):
            raise ValueError("job ids must be unique within a scenario")
        self._task_counter = 0
        self.tasks: list[Task] = []
        self.ready: list[Task] = []
        self.suspended: dict[int, Task] = {}
        self.pending_by_job: dict[str, deque[Task]] = {}
        self.submit_order: list[str] = []
        self.spill_files: list[SpillFile] = []
        self.steps = 0
        self.now = 0
        self.ome = False
        self.ome_ns: int | None = None
        self.min_active = 10 ** 9
        self.active_series: list[tuple[int, int]] = []
        self.safety_resumes = 0
        self._tasks_by_id: dict[int, Task] = {}
        self._time_waiting: deque[JobState] = deque()
        self._slots_dirty = True

    # -- orchestration --------------------------------------------------------

    def run(self) -> RunResult:
        waiting = sorted(
            (job for job in self.jobs.values() if job.program.submit_after is None),
            key=lambda job: (job.program.submit_ns, job.job_id),
        )
        self._time_waiting = deque(waiting)
        self._slots_dirty = True
        while True:
            if self._time_waiting and self._time_waiting[0].program.submit_ns <= self.now:
                self._admit_due_jobs()
            if self._slots_dirty:
                self._assign_slots()
            if not self.ready:
                if self.suspended:
                    # Nothing runnable while suspended tasks hold slots: no
                    # completion or collection can ever fire, so unwedge.
                    self._safety_resume()
                    continue
                if self._time_waiting:
                    self.now = max(self.now, self._time_waiting[0].program.submit_ns)
                    continue
                break
            task = self.ready[0]
            best_ns = task.next_ns
            for other in self.ready:
                other_ns = other.next_ns
                if other_ns < best_ns or (
                    other_ns == best_ns and other.task_id < task.task_id
                ):
                    task = other
                    best_ns = other_ns
            self.now = best_ns
            self.heap.now_ns = best_ns
            result = self._step(task)
            if result is StepResult.OUT_OF_MEMORY:
                self.ome = True
                self.ome_ns = self.now
                break
            if result is StepResult.SUSPENDED_AT_BOUNDARY:
                self.ready.remove(task)
                task.state = TaskState.SUSPENDED
                task.suspend_observed_ns = task.next_ns
                self.suspended[task.task_id] = task
            elif result is StepResult.FINISHED:
                self._finish_task(task)
            self.steps += 1
            if self.steps % self.cfg.sample_period == 0:
                self._sample_and_schedule()
        end_ns = max((t.end_ns for t in self.tasks), default=self.now)
        if self.ome_ns is not None:
            end_ns = max(end_ns, self.ome_ns)
        return RunResult(
            policy=self.scheduler.config.policy,
            tasks=self.tasks,
            jobs=self.jobs,
            heap=self.heap,
            scheduler=self.scheduler,
            spill_files=self.spill_files,
            ome=self.ome,
            ome_ns=self.ome_ns,
            end_ns=end_ns,
            total_steps=self.steps,
            min_active_tasks=0 if self.min_active == 10 ** 9 else self.min_active,
            active_series=self.active_series,
            safety_resumes=self.safety_resumes,
        )

    def _any_pending(self) -> bool:
        return any(self.pending_by_job.values()) or bool(self._time_waiting)

    def _admit_due_jobs(self) -> None:
        while self._time_waiting and self._time_waiting[0].program.submit_ns <= self.now:
            self._submit_job(self._time_waiting.popleft())

    def _submit_job(self, job: JobState) -> None:
        job.submitted_ns = max(self.now, job.program.submit_ns)
        self.submit_order.append(job.job_id)
        self.pending_by_job[job.job_id] = deque()
        self._slots_dirty = True
        self._start_stage(job, 0)

    def _start_stage(self, job: JobState, stage_idx: int) -> None:
        program = job.program
        job.stage_idx = stage_idx
        job.finished_in_stage = 0
        plan = program.stage_plans[stage_idx]
        n = program.tasks_per_stage
        tasks: list[Task] = []
        if stage_idx == 0:
            dataset = program.dataset
            for index, split in enumerate(split_dataset(dataset, n)):
                tasks.append(self._make_task(
                    job, stage_idx, index, plan,
                    dataset.iter_split(split), split.record_count, split.total_bytes,
                ))
        else:
            upstream: list[Record] = []
            for prev in job.stage_tasks:
                upstream.extend(prev.outputs)
                prev.outputs = []
            if plan.reread_cache:
                source = job.cache_records + upstream
            else:
                source = upstream
            for index, part in enumerate(partition_records(source, n)):
                total_bytes = sum(r.size_bytes for r in part)
                tasks.append(self._make_task(
                    job, stage_idx, index, plan, iter(part), len(part), total_bytes,
                ))
        job.stage_tasks = tasks
        self.pending_by_job[job.job_id].extend(tasks)
        self._slots_dirty = True
        self._on_stage_started(job.job_id, stage_idx)

    def _make_task(self, job: JobState, stage_idx: int, index: int, plan: StagePlan,
                   records: Iterator[Record], total_records: int, total_bytes: int) -> Task:
        task = Task(self._task_counter, job.job_id, stage_idx, index, plan,
                    records, total_records, total_bytes)
        self._task_counter += 1
        self.tasks.append(task)
        self._tasks_by_id[task.task_id] = task
        return task

    def _on_stage_started(self, job_id: str, stage_idx: int) -> None:
        # Jobs waiting on a (job, stage) trigger are submitted the moment that
        # stage's tasks are created.
        for job in self.jobs.values():
            trigger = job.program.submit_after
            if (
                trigger is not None
                and job.job_id not in self.submit_order
                and trigger[0] == job_id
                and trigger[1] == stage_idx
            ):
                self._submit_job(job)

    def _assign_slots(self) -> None:
        self._slots_dirty = False
        free = self.cfg.slots - len(self.ready) - len(self.suspended)
        if free <= 0:
            return
        # The red admission gate only makes sense while something is running;
        # with an idle worker the stale pressure estimate must not block work.
        pressure_red = (
            self.heap.pressure_level() is PressureLevel.RED and bool(self.ready)
        )
        picked = self.scheduler.assign_slots(
            self.pending_by_job, self.submit_order, free, pressure_red
        )
        for task in picked:
            task.state = TaskState.RUNNING
            task.start_ns = self.now
            task.next_ns = self.now
            self.ready.append(task)

    def _safety_resume(self) -> None:
        # Unreachable under the shipped scheduler guards; kept as a deadlock
        # valve for pathological configurations.
        state = self.scheduler.state
        task_id = state.suspend_queue.popleft()
        state.suspend_flags[task_id] = False
        self.safety_resumes += 1
        self._reactivate(task_id)

    # -- stepping -------------------------------------------------------------

    def _step(self, task: Task) -> StepResult:
        if task.suspend_flag:
            return StepResult.SUSPENDED_AT_BOUNDARY
        cfg = self.cfg
        plan = task.plan
        try:
            if task.drain is not None:
                if task.drain_pos >= len(task.drain):
                    return StepResult.FINISHED
                rec = task.drain[task.drain_pos]
                task.drain_pos += 1
                temp = rec.size_bytes + self._emit_downstream(task, rec)
                task.metrics.written_records += 1
            else:
                rec = next(task.input_iter, None)
                if rec is None:
                    if plan.buffering_read:
                        task.drain = self._build_drain(task)
                        task.drain_pos = 0
                        task.metrics.phase = "write"
                        task.metrics.write_total_records = len(task.drain)
                        return StepResult.PROGRESSED
                    return StepResult.FINISHED
                task.processed_records += 1
                task.processed_bytes += rec.size_bytes
                temp = rec.size_bytes
                if plan.buffering_read:
                    self._absorb_read(task, rec)
                else:
                    temp += self._emit_downstream(task, rec)
            if temp > 0:
                self.heap.allocate(
                    Allocation(task.task_id, AllocationKind.TEMPORARY, temp)
                )
        except OutOfMemory:
            return StepResult.OUT_OF_MEMORY

        ns_per_byte = plan.compute_ns_per_byte or cfg.compute_ns_per_byte
        cost = int(temp * ns_per_byte)
        pause = self.heap.take_pending_pause()
        task.next_ns += cost + pause
        if pause:
            for other in self.ready:
                if other is not task:
                    other.next_ns += pause
                    other.gc_attr_ns += pause
            task.gc_attr_ns += pause
            # Collections move the pressure estimate; admission gating and
            # the assignment of freed slots may change with it.
            self._slots_dirty = True
        if self.heap.take_pending_full_gc():
            # Resume decisions carry the collection's own timestamp so the
            # decision log lines up with the collection log.
            self._after_full_gc(self.now)

        consumption = task.consumption_bytes
        if consumption > task.metrics.peak_consumption_bytes:
            task.metrics.peak_consumption_bytes = consumption
        if self._should_spill(task, consumption):
            self.spill(task)
            return StepResult.SPILL_REQUESTED
        return StepResult.PROGRESSED

    def _absorb_read(self, task: Task, rec: Record) -> None:
        kind = task.plan.read_kind
        grew = 0
        if kind is ReadKind.SORT_BUFFER:
            task.read_buf.append(rec)
            grew = rec.size_bytes + self.cfg.entry_overhead_bytes
        elif kind is ReadKind.AGG_MERGE:
            buf = task.read_buf
            key = rec.key
            if key in buf:
                buf[key] ^= rec.value
            else:
                buf[key] = rec.value
                grew = ops.KEY_WIDTH + ops.AGG_VALUE_BYTES + self.cfg.entry_overhead_bytes
        elif kind is ReadKind.DISTINCT_MERGE:
            buf = task.read_buf
            key = rec.key
            held = buf.get(key)
            if held is None:
                buf[key] = rec.size_bytes
                grew = rec.size_bytes + self.cfg.entry_overhead_bytes
            elif rec.size_bytes > held:
                buf[key] = rec.size_bytes
                grew = rec.size_bytes - held
        else:  # GROUP
            buf = task.read_buf
            key = rec.key
            member = ops.group_member_bytes(
                rec, self.cfg.record_overhead_bytes, self.cfg.entry_overhead_bytes
            )
            entry = buf.get(key)
            if entry is None:
                buf[key] = [rec.value, member]
                grew = ops.KEY_WIDTH + self.cfg.entry_overhead_bytes + member
            else:
                entry[0] ^= rec.value
                entry[1] += member
                grew = member
        task.buffer_inputs += 1
        if grew:
            task.read_buf_bytes += grew
            self.heap.allocate(
                Allocation(task.task_id, AllocationKind.LONG_LIVING, grew)
            )

    def _build_drain(self, task: Task) -> list[Record]:
        """Merge spilled read segments with the live buffer into the emit list."""
        kind = task.plan.read_kind
        overhead = self.cfg.record_overhead_bytes
        if kind is ReadKind.SORT_BUFFER:
            records: list[Record] = list(task.read_buf)
            for segment in task.read_segments:
                records.extend(segment)
            records.sort(key=lambda r: (r.key, r.value, r.size_bytes))
            return records
        if kind is ReadKind.AGG_MERGE:
            merged: dict[int, int] = {}
            for segment in task.read_segments + [task.read_buf]:
                for key, token in segment.items():
                    merged[key] = merged[key] ^ token if key in merged else token
            return [
                ops.agg_output_record(key, token, overhead)
                for key, token in merged.items()
            ]
        if kind is ReadKind.DISTINCT_MERGE:
            sizes: dict[int, int] = {}
            for segment in task.read_segments + [task.read_buf]:
                for key, size in segment.items():
                    if sizes.get(key, -1) < size:
                        sizes[key] = size
            return [
                Record(key, ops.distinct_token(key), size)
                for key, size in sizes.items()
            ]
        merged_groups: dict[int, list[int]] = {}
        for segment in task.read_segments + [task.read_buf]:
            for key, (token, member_bytes) in segment.items():
                entry = merged_groups.get(key)
                if entry is None:
                    merged_groups[key] = [token, member_bytes]
                else:
                    entry[0] ^= token
                    entry[1] += member_bytes
        return [
            ops.group_output_record(key, token, member_bytes, overhead)
            for key, (token, member_bytes) in merged_groups.items()
        ]

    def _emit_downstream(self, task: Task, rec: Record) -> int:
        """Run one record through process ops and the write side; returns temp bytes."""
        cfg = self.cfg
        overhead = cfg.record_overhead_bytes
        temp = 0
        records = [rec]
        for op_name, params in task.plan.process:
            produced: list[Record] = []
            if op_name == "map":
                for r in records:
                    out = ops.map_record(r, params)
                    temp += out.size_bytes
                    produced.append(out)
            elif op_name == "filter":
                for r in records:
                    if ops.filter_keeps(r, params):
                        produced.append(r)
            else:  # flatmap
                for r in records:
                    children = ops.flatmap_children(r, params, overhead)
                    for child in children:
                        temp += child.size_bytes
                    produced.extend(children)
            records = produced
        if task.plan.caches and records:
            job = self.jobs[task.job_id]
            cache_owner = ("cache", task.job_id)
            for r in records:
                block = ops.cache_record(r)
                job.cache_records.append(block)
                job.cached_bytes += block.size_bytes
                task.cached_unrolled += block.size_bytes
                self.heap.allocate(
                    Allocation(cache_owner, AllocationKind.LONG_LIVING, block.size_bytes)
                )
        write = task.plan.write_kind
        if write is WriteKind.COLLECT or write is WriteKind.PARTITION:
            task.outputs.extend(records)
            task.metrics.written_records += len(records)
            return temp
        if write is WriteKind.AGG:
            buf = task.write_buf
            entry_bytes = ops.KEY_WIDTH + ops.AGG_VALUE_BYTES + cfg.entry_overhead_bytes
            for r in records:
                key = r.key
                if key in buf:
                    buf[key] ^= r.value
                else:
                    buf[key] = r.value
                    task.write_buf_bytes += entry_bytes
                    self.heap.allocate(
                        Allocation(task.task_id, AllocationKind.LONG_LIVING, entry_bytes)
                    )
                task.buffer_inputs += 1
            task.metrics.written_records += len(records)
            return temp
        if write is WriteKind.DISTINCT:
            buf = task.write_buf
            for r in records:
                key = r.key
                held = buf.get(key)
                grew = 0
                if held is None:
                    buf[key] = r.size_bytes
                    grew = r.size_bytes + cfg.entry_overhead_bytes
                elif r.size_bytes > held:
                    buf[key] = r.size_bytes
                    grew = r.size_bytes - held
                if grew:
                    task.write_buf_bytes += grew
                    self.heap.allocate(
                        Allocation(task.task_id, AllocationKind.LONG_LIVING, grew)
                    )
                task.buffer_inputs += 1
            task.metrics.written_records += len(records)
            return temp
        # WriteKind.GROUP
        buf = task.write_buf
        for r in records:
            key = r.key
            member = ops.group_member_bytes(r, overhead, cfg.entry_overhead_bytes)
            entry = buf.get(key)
            if entry is None:
                buf[key] = [r.value, member]
                grew = ops.KEY_WIDTH + cfg.entry_overhead_bytes + member
            else:
                entry[0] ^= r.value
                entry[1] += member
                grew = member
            task.write_buf_bytes += grew
            self.heap.allocate(
                Allocation(task.task_id, AllocationKind.LONG_LIVING, grew)
            )
            task.buffer_inputs += 1
        task.metrics.written_records += len(records)
        return temp

    # -- spilling -------------------------------------------------------------

    def _should_spill(self, task: Task, consumption: int) -> bool:
        spillable = task.read_buf_bytes + task.write_buf_bytes
        if task.drain is not None:
            # The read buffer is being drained; only the write side may move.
            spillable = task.write_buf_bytes
        if spillable < self.cfg.spill_min_bytes:
            return False
        share = self.heap.config.total_bytes / max(1, len(self.ready))
        return consumption > share

    def spill(self, task: Task) -> SpillFile:
        """Move the task's buffers to scratch, freeing their heap bytes."""
        task.state = TaskState.SPILLING
        spilled_bytes = 0
        record_count = 0
        if task.drain is None and task.read_buf_bytes:
            task.read_segments.append(task.read_buf)
            spilled_bytes += task.read_buf_bytes
            task.read_buf = [] if task.plan.read_kind is ReadKind.SORT_BUFFER else {}
            task.read_buf_bytes = 0
        if task.write_buf_bytes:
            task.write_segments.append(task.write_buf)
            spilled_bytes += task.write_buf_bytes
            task.write_buf = {}
            task.write_buf_bytes = 0
        record_count = task.buffer_inputs - sum(
            f.record_count for f in self.spill_files if f.owner_task == task.task_id
        )
        if spilled_bytes:
            self.heap.free_owner_bytes(task.task_id, spilled_bytes)
        cost = int(spilled_bytes * self.cfg.spill_ns_per_byte)
        task.next_ns += cost
        task.spill_count += 1
        task.spilled_bytes += spilled_bytes
        task.metrics.spill_epoch += 1
        path = self._write_spill_file(task, spilled_bytes, record_count)
        spill = SpillFile(task.task_id, spilled_bytes, record_count, task.next_ns, path)
        self.spill_files.append(spill)
        task.state = TaskState.RUNNING
        return spill

    def _write_spill_file(self, task: Task, nbytes: int, count: int) -> str | None:
        if not self.cfg.scratch_dir:
            return None
        os.makedirs(self.cfg.scratch_dir, exist_ok=True)
        path = os.path.join(
            self.cfg.scratch_dir,
            f"spill-{task.job_id}-t{task.task_id}-{task.spill_count}.bin",
        )
        with open(path, "wb") as fh:
            fh.write(count.to_bytes(8, "big"))
            fh.write(nbytes.to_bytes(8, "big"))
        return path

    # -- completion -----------------------------------------------------------

    def _finish_task(self, task: Task) -> None:
        write = task.plan.write_kind
        overhead = self.cfg.record_overhead_bytes
        if write is WriteKind.AGG:
            merged: dict[int, int] = {}
            for segment in task.write_segments + [task.write_buf]:
                for key, token in segment.items():
                    merged[key] = merged[key] ^ token if key in merged else token
            task.outputs = [
                ops.agg_output_record(key, token, overhead)
                for key, token in merged.items()
            ]
        elif write is WriteKind.DISTINCT:
            sizes: dict[int, int] = {}
            for segment in task.write_segments + [task.write_buf]:
                for key, size in segment.items():
                    if sizes.get(key, -1) < size:
                        sizes[key] = size
            task.outputs = [
                Record(key, ops.distinct_token(key), size)
                for key, size in sizes.items()
            ]
        elif write is WriteKind.GROUP:
            groups: dict[int, list[int]] = {}
            for segment in task.write_segments + [task.write_buf]:
                for key, (token, member_bytes) in segment.items():
                    entry = groups.get(key)
                    if entry is None:
                        groups[key] = [token, member_bytes]
                    else:
                        entry[0] ^= token
                        entry[1] += member_bytes
            task.outputs = [
                ops.group_output_record(key, token, member_bytes, overhead)
                for key, (token, member_bytes) in groups.items()
            ]
        task.state = TaskState.FINISHED
        task.end_ns = task.next_ns
        self.ready.remove(task)
        self._slots_dirty = True
        self.heap.free_task_memory(task.task_id)
        task.read_buf = {}
        task.write_buf = {}
        task.drain = None

        resumed = self.scheduler.on_task_complete(task.end_ns, task.task_id)
        if resumed is not None:
            self._reactivate(resumed, task.end_ns)

        job = self.jobs[task.job_id]
        job.finished_in_stage += 1
        if job.finished_in_stage == len(job.stage_tasks):
            next_stage = job.stage_idx + 1
            if next_stage < len(job.program.stage_plans):
                self._start_stage(job, next_stage)
            else:
                job.done = True
                job.end_ns = max(t.end_ns for t in job.stage_tasks)
                self.heap.free_task_memory(("cache", task.job_id))

    def _reactivate(self, task_id: int, trigger_ns: int | None = None) -> None:
        task = self._tasks_by_id[task_id]
        task.suspend_flag = False
        if task.state is TaskState.SUSPENDED:
            self.suspended.pop(task_id, None)
            task.state = TaskState.RUNNING
            when = max(task.next_ns, trigger_ns if trigger_ns is not None else self.now)
            task.suspended_ns += when - task.suspend_observed_ns
            task.suspension_intervals.append((task.suspend_observed_ns, when))
            task.next_ns = when
            self.ready.append(task)

    def _after_full_gc(self, now_ns: int) -> None:
        resumed = self.scheduler.on_pressure_receded(
            now_ns, self.heap.long_living_fraction
        )
        for task_id in resumed:
            self._reactivate(task_id, now_ns)

    # -- sampling and scheduling ----------------------------------------------

    def _sample_and_schedule(self) -> None:
        running_metrics = []
        for task in self.ready:
            m = task.metrics
            m.processed_records = task.processed_records
            m.processed_bytes = task.processed_bytes
            m.shuffle_buffer_bytes = task.buffer_bytes
            m.cached_bytes = task.cached_unrolled
            m.consumption_bytes = task.consumption_bytes
            running_metrics.append(m)
        self.sampler.tick(self.now, running_metrics)
        active = len(self.ready)
        if self.ready or self.suspended or self._any_pending():
            if active < self.min_active:
                self.min_active = active
            self.active_series.append((self.now, active))
        if self.scheduler.config.policy is not Policy.MURS:
            return
        views = [
            TaskView(
                task_id=task.task_id,
                rate=task.metrics.rate,
                consumption=task.metrics.consumption_bytes,
                percent=completion_percent(task.metrics),
            )
            for task in self.ready
        ]
        actions = self.scheduler.schedule_tick(
            self.now,
            self.heap.long_living_fraction,
            self.heap.free_memory,
            self.heap.config.total_bytes,
            views,
        )
        for task_id, _reason in actions:
            self._tasks_by_id[task_id].suspend_flag = True
