"""Periodic per-task metric collection and memory-usage-rate estimation.

The sampler runs at a fixed virtual-time cadence (every ``sample_period``
record steps of the engine loop). At each tick it snapshots every running
task's counters and computes the task's current memory usage rate: the
quotient of two increments, new long-living bytes over newly processed input
bytes, averaged over a small window of samples. The changing trend of that
rate is what reveals which growth model the task is currently in.

Bytes are the canonical unit (record sizes vary across datasets); per-record
counts are carried alongside for reporting. Suspended tasks keep their last
metrics frozen, and intervals containing a spill are skipped because a spill
drops occupancy without un-producing anything.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

DEFAULT_WINDOW = 4
DEFAULT_TREND_EPS = 0.05


class Trend(enum.Enum):
    FLAT = "flat"            # constant model: no long-living production
    DECREASING = "decreasing"  # sub-linear
    STEADY = "steady"        # linear
    INCREASING = "increasing"  # super-linear


@dataclass
class TaskMetrics:
    """Live counters for one task, updated at sampler ticks."""

    task_id: int
    total_records: int = 0
    total_bytes: int = 0
    processed_records: int = 0
    processed_bytes: int = 0
    written_records: int = 0
    write_total_records: int = 0
    shuffle_buffer_bytes: int = 0
    cached_bytes: int = 0
    consumption_bytes: int = 0
    phase: str = "read"
    spill_epoch: int = 0
    rate_history: list[tuple[int, float]] = field(default_factory=list)
    # Raw per-tick snapshots: (time, processed_bytes, consumption, spill_epoch)
    samples: list[tuple[int, int, int, int]] = field(default_factory=list)
    interval_rates: list[float] = field(default_factory=list)
    rate: float | None = None
    trend: Trend = Trend.FLAT
    peak_consumption_bytes: int = 0


@dataclass(frozen=True)
class RateEstimate:
    task_id: int
    rate: float
    trend: Trend


def completion_percent(metrics: TaskMetrics) -> float:
    """Fraction of the task's work done, in [0, 1].

    Input-driven phases report processed bytes over total bytes. In the
    write (drain) phase the interruptible loop has both absorbed its input
    and is emitting output, so progress counts both directions; a pure
    written/total ratio would read zero at the drain boundary and project an
    infinite memory need for a buffer that has just *stopped* growing.
    Empty splits count as complete.
    """
    if metrics.phase == "write":
        done = metrics.total_records + metrics.written_records
        total = metrics.total_records + metrics.write_total_records
        if total <= 0:
            return 1.0
        return min(1.0, done / total)
    if metrics.total_bytes <= 0:
        return 1.0
    return min(1.0, metrics.processed_bytes / metrics.total_bytes)


def memory_usage_rate(
    metrics: TaskMetrics, window: int = DEFAULT_WINDOW
) -> RateEstimate | None:
    """Windowed rate estimate, or None while the task is not yet measured."""
    if len(metrics.samples) < 2 or not metrics.interval_rates:
        return None
    tail = metrics.interval_rates[-window:]
    rate = sum(tail) / len(tail)
    return RateEstimate(metrics.task_id, rate, metrics.trend)


class Sampler:
    """Collects metrics for all running tasks on one worker."""

    def __init__(self, window: int = DEFAULT_WINDOW, trend_eps: float = DEFAULT_TREND_EPS):
        self.window = window
        self.trend_eps = trend_eps

    def tick(self, now_ns: int, running_metrics: list[TaskMetrics]) -> None:
        for m in running_metrics:
            self._sample_one(now_ns, m)

    def _sample_one(self, now_ns: int, m: TaskMetrics) -> None:
        sample = (now_ns, m.processed_bytes, m.consumption_bytes, m.spill_epoch)
        if m.samples:
            prev = m.samples[-1]
            d_processed = sample[1] - prev[1]
            if sample[3] != prev[3]:
                # A spill reset the consumption baseline inside this interval;
                # the rate measures production, not net occupancy, so skip it.
                pass
            elif d_processed > 0:
                d_consumption = sample[2] - prev[2]
                m.interval_rates.append(max(0.0, d_consumption / d_processed))
            elif m.interval_rates:
                # Nothing processed: carry the previous estimate forward.
                m.interval_rates.append(m.interval_rates[-1])
        m.samples.append(sample)

        estimate = memory_usage_rate(m, self.window)
        if estimate is None:
            return
        previous_rate = m.rate
        m.rate = estimate.rate
        m.rate_history.append((now_ns, estimate.rate))
        m.trend = self._classify_trend(previous_rate, estimate.rate)

    def _classify_trend(self, previous: float | None, current: float) -> Trend:
        if current == 0.0:
            return Trend.FLAT
        if previous is None or previous == 0.0:
            return Trend.STEADY
        change = (current - previous) / previous
        if change < -self.trend_eps:
            return Trend.DECREASING
        if change > self.trend_eps:
            return Trend.INCREASING
        return Trend.STEADY
