"""Memory-usage-rate scheduling: suspension gate, spill screening, resume rules.

The scheduler is a pure decision layer over snapshots; the engine applies its
actions. Each tick runs a four-way gate on the heap's long-living estimate:

* below yellow: no action;
* at or above yellow but below red: spill screening only - any running task
  whose consumption (or projected total need) exceeds its fair share of the
  heap, M/N, is suspended to head off a spill;
* at or above red with suspended tasks already queued: no action;
* at or above red with an empty queue: propose suspensions by walking the
  running tasks from lightest to heaviest measured rate, charging each
  admitted task's remaining need against free memory until the budget runs
  out; everything never admitted is suspended, FIFO-queued.

Two resume rules: a task completion resumes exactly one queued task (FIFO
head), and a full collection that lands the estimate below yellow resumes
them all.
"""

from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass, field


class Policy(enum.Enum):
    MURS = "murs"
    FAIR = "fair"
    FIFO = "fifo"


@dataclass(frozen=True)
class SchedulerConfig:
    policy: Policy = Policy.MURS
    yellow: float = 0.4
    red: float = 0.8
    fair_pool_weights: dict[str, int] | None = None

    def validate(self) -> None:
        if not (0.0 < self.yellow < self.red):
            raise ValueError("yellow < red required")


@dataclass(frozen=True)
class TaskView:
    """Scheduler-facing snapshot of one running task."""

    task_id: int
    rate: float | None          # None while not yet measured
    consumption: int
    percent: float


@dataclass(frozen=True)
class Decision:
    time_ns: int
    action: str                 # suspend | resume | complete
    task_ids: tuple[int, ...]
    reason: str                 # yellow | red | spill | complete | receded
    queue_len: int


def compute_spill(
    consumption: int, percent: float, total_memory: int, running_count: int
) -> bool:
    """True when a task's memory use is on course to exceed its M/N share."""
    if running_count < 1:
        raise ValueError("running_count must be >= 1")
    share = total_memory / running_count
    if consumption > share:
        return True
    if percent <= 0.0:
        return consumption > 0
    return consumption / percent > share


def _rate_order_key(view: TaskView) -> tuple[int, float, int]:
    # Unmeasured tasks sort lightest; ties break on the lower task id.
    if view.rate is None:
        return (0, 0.0, view.task_id)
    return (1, view.rate, view.task_id)


def compute_suspend_tasks(
    running: list[TaskView], free_memory: int, total_memory: int
) -> list[int]:
    """Propose the set of tasks to suspend, ordered lightest first.

    Walks candidates by ascending measured rate. A candidate that screens
    true for spill avoidance stops the walk (parallelism is reduced instead);
    otherwise its remaining memory need, consumption * (1 - percent), is
    charged against free memory and it is admitted to keep running. The walk
    also stops once free memory is exhausted; the admitted task that drove
    the budget negative stays admitted. Every candidate never admitted is
    returned for suspension.
    """
    if not running:
        return []
    order = sorted(running, key=_rate_order_key)
    n_running = len(running)
    suspended = {view.task_id for view in order}
    budget = float(free_memory)
    index = 0
    while budget > 0 and index < len(order):
        view = order[index]
        if compute_spill(view.consumption, view.percent, total_memory, n_running):
            break
        budget -= view.consumption * (1.0 - view.percent)
        suspended.discard(view.task_id)
        index += 1
    return [view.task_id for view in order if view.task_id in suspended]


@dataclass
class SchedulerState:
    suspend_queue: deque[int] = field(default_factory=deque)
    suspend_flags: dict[int, bool] = field(default_factory=dict)
    decision_log: list[Decision] = field(default_factory=list)


class Scheduler:
    """Per-worker scheduler: gating, queue bookkeeping, resume rules."""

    def __init__(self, config: SchedulerConfig):
        config.validate()
        self.config = config
        self.state = SchedulerState()
        self._fair_cursor = 0

    # -- suspension ---------------------------------------------------------

    def schedule_tick(
        self,
        now_ns: int,
        long_living_fraction: float,
        free_memory: int,
        total_memory: int,
        running: list[TaskView],
    ) -> list[tuple[int, str]]:
        """Run the four-way gate; returns (task_id, reason) suspension actions."""
        if self.config.policy is not Policy.MURS or not running:
            return []
        if long_living_fraction < self.config.yellow:
            return []
        if long_living_fraction < self.config.red:
            # Yellow band: per-task spill screening only.
            n = len(running)
            flagged = [
                view
                for view in sorted(running, key=lambda v: v.task_id)
                if compute_spill(view.consumption, view.percent, total_memory, n)
            ]
            if len(flagged) == len(running) and flagged:
                # Never park the whole worker; the smallest consumer stays.
                keep = min(flagged, key=lambda v: (v.consumption, v.task_id))
                flagged = [v for v in flagged if v.task_id != keep.task_id]
            actions = [(view.task_id, "yellow") for view in flagged]
            self._apply_suspensions(now_ns, actions)
            return actions
        if self.state.suspend_queue:
            return []
        proposed = compute_suspend_tasks(running, free_memory, total_memory)
        if len(proposed) == len(running) and proposed:
            # Never park the whole worker: the lightest proposed task keeps
            # running, matching the intent that the lowest-rate tasks stay.
            proposed = proposed[1:]
        actions = [(task_id, "red") for task_id in proposed]
        self._apply_suspensions(now_ns, actions)
        return actions

    def _apply_suspensions(self, now_ns: int, actions: list[tuple[int, str]]) -> None:
        for task_id, reason in actions:
            self.state.suspend_flags[task_id] = True
            self.state.suspend_queue.append(task_id)
            self.state.decision_log.append(
                Decision(now_ns, "suspend", (task_id,), reason,
                         len(self.state.suspend_queue))
            )

    def is_suspend_requested(self, task_id: int) -> bool:
        return self.state.suspend_flags.get(task_id, False)

    # -- resume -------------------------------------------------------------

    def on_task_complete(self, now_ns: int, task_id: int) -> int | None:
        """A completion resumes exactly one suspended task (FIFO head)."""
        self.state.decision_log.append(
            Decision(now_ns, "complete", (task_id,), "complete",
                     len(self.state.suspend_queue))
        )
        if not self.state.suspend_queue:
            return None
        resumed = self.state.suspend_queue.popleft()
        self.state.suspend_flags[resumed] = False
        self.state.decision_log.append(
            Decision(now_ns, "resume", (resumed,), "complete",
                     len(self.state.suspend_queue))
        )
        return resumed

    def on_pressure_receded(self, now_ns: int, long_living_fraction: float) -> list[int]:
        """After a full GC below yellow, resume every queued task."""
        if long_living_fraction >= self.config.yellow or not self.state.suspend_queue:
            return []
        resumed = list(self.state.suspend_queue)
        self.state.suspend_queue.clear()
        for task_id in resumed:
            self.state.suspend_flags[task_id] = False
        self.state.decision_log.append(
            Decision(now_ns, "resume", tuple(resumed), "receded", 0)
        )
        return resumed

    # -- slot assignment ----------------------------------------------------

    def assign_slots(
        self,
        pending_by_job: dict[str, deque],
        submit_order: list[str],
        free_slots: int,
        pressure_red: bool,
    ) -> list:
        """Pick pending tasks for free slots under the configured policy.

        Fair (and MURS, which reuses fair placement) round-robins across jobs
        with pending work, weighted by fair_pool_weights; FIFO drains jobs in
        submission order. Under MURS no task is admitted while pressure sits
        at or above red: freeing cores is the point of suspension.
        """
        if free_slots <= 0:
            return []
        if self.config.policy is Policy.MURS and pressure_red:
            return []
        picked: list = []
        if self.config.policy is Policy.FIFO:
            for job in submit_order:
                queue = pending_by_job.get(job)
                while queue and len(picked) < free_slots:
                    picked.append(queue.popleft())
                if len(picked) >= free_slots:
                    break
            return picked
        weights = self.config.fair_pool_weights or {}
        jobs = [job for job in submit_order if pending_by_job.get(job)]
        while jobs and len(picked) < free_slots:
            self._fair_cursor %= len(jobs)
            job = jobs[self._fair_cursor]
            queue = pending_by_job[job]
            for _ in range(max(1, weights.get(job, 1))):
                if not queue or len(picked) >= free_slots:
                    break
                picked.append(queue.popleft())
            if queue:
                self._fair_cursor += 1
            else:
                jobs.pop(self._fair_cursor)
        return picked
