"""Byte-accurate model of a generational managed heap shared by all tasks.

The heap is split into a young and an old generation with hard byte caps.
Temporary allocations land in the young generation and die at the next
collection; long-living allocations (shuffle buffers, cached blocks) land in
the young generation too but survive collections and get promoted to the old
generation. A minor collection empties the young generation (reclaiming
temporaries and anything explicitly freed, promoting live long-living bytes);
a full collection additionally reclaims dead old-generation bytes.

Pressure is read from ``long_living_fraction``, an *estimate* updated only at
collection events: after a minor collection it equals the occupied heap
fraction, which still counts dead old-generation bytes (the collector cannot
tell them apart), so it can overestimate; a full collection revises it to
exactly live/total. Pause times are charged per surviving byte (minor) and
per live byte (full), so a heap full of long-living data makes every
collection expensive - which is the whole point of the model.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field


class OutOfMemory(RuntimeError):
    """Live long-living bytes exceed heap capacity even after a full GC."""


class GcKind(enum.Enum):
    MINOR = "minor"
    FULL = "full"


class AllocationKind(enum.Enum):
    TEMPORARY = "temporary"
    LONG_LIVING = "long_living"


class PressureLevel(enum.IntEnum):
    NORMAL = 0
    YELLOW = 1
    RED = 2


@dataclass(frozen=True)
class HeapConfig:
    total_bytes: int
    young_fraction: float = 0.1
    yellow: float = 0.4
    red: float = 0.8
    minor_pause_ns_per_surviving_byte: float = 1.0
    full_pause_ns_per_live_byte: float = 2.0
    # Old-generation occupancy (fraction of old capacity) at which a minor
    # collection initiates a full one - the collector does not wait for hard
    # exhaustion. Occupancy pinned above this is what makes full collections
    # frequent under pressure.
    full_gc_threshold: float = 0.92

    def validate(self) -> None:
        if self.total_bytes <= 0:
            raise ValueError("total_bytes must be positive")
        if not (0.0 < self.young_fraction < 1.0):
            raise ValueError("young_fraction must be in (0, 1)")
        if not (0.0 < self.yellow < self.red < 1.0):
            raise ValueError("thresholds must satisfy 0 < yellow < red < 1")
        if not (0.0 < self.full_gc_threshold <= 1.0):
            raise ValueError("full_gc_threshold must be in (0, 1]")
        if self.minor_pause_ns_per_surviving_byte < 0:
            raise ValueError("minor pause cost must be non-negative")
        if self.full_pause_ns_per_live_byte < 0:
            raise ValueError("full pause cost must be non-negative")

    @property
    def young_capacity(self) -> int:
        return int(self.total_bytes * self.young_fraction)

    @property
    def old_capacity(self) -> int:
        return self.total_bytes - self.young_capacity


@dataclass(frozen=True)
class Allocation:
    owner: object
    kind: AllocationKind
    bytes: int


@dataclass(frozen=True)
class GcEvent:
    kind: GcKind
    promoted_or_reclaimed_bytes: int
    pause_ns: int
    heap_usage_after: float
    long_living_fraction_after: float
    time_ns: int


@dataclass
class ManagedHeap:
    """Mutable heap state plus the allocation / collection operations.

    One instance per worker; the engine serializes all mutations through its
    event loop and hands the scheduler read-only snapshots.
    """

    config: HeapConfig
    now_ns: int = 0

    young_temp: int = 0
    young_dead: int = 0
    old_dead: int = 0
    young_ll: dict = field(default_factory=dict)   # owner -> live bytes in young
    old_ll: dict = field(default_factory=dict)     # owner -> live bytes in old
    young_ll_total: int = 0
    old_ll_total: int = 0

    long_living_fraction: float = 0.0
    gc_log: list[GcEvent] = field(default_factory=list)
    cumulative_gc_pause_ns: int = 0
    pending_pause_ns: int = 0   # pauses since the engine last drained them
    pending_full_gc: bool = False

    def __post_init__(self) -> None:
        self.config.validate()

    # -- accounting views ---------------------------------------------------

    @property
    def young_used(self) -> int:
        return self.young_temp + self.young_ll_total + self.young_dead

    @property
    def old_used(self) -> int:
        return self.old_ll_total + self.old_dead

    @property
    def live_long_living(self) -> int:
        return self.young_ll_total + self.old_ll_total

    def owner_live_bytes(self, owner: object) -> int:
        return self.young_ll.get(owner, 0) + self.old_ll.get(owner, 0)

    @property
    def free_memory(self) -> int:
        return self.config.total_bytes - self.young_used - self.old_used

    def take_pending_pause(self) -> int:
        pause = self.pending_pause_ns
        self.pending_pause_ns = 0
        return pause

    def take_pending_full_gc(self) -> bool:
        fired = self.pending_full_gc
        self.pending_full_gc = False
        return fired

    # -- operations -----------------------------------------------------------

    def allocate(self, allocation: Allocation) -> None:
        """Place an allocation, collecting first if the young generation is full.

        Raises OutOfMemory when live long-living bytes cannot fit even after
        a full collection.
        """
        nbytes = allocation.bytes
        if nbytes <= 0:
            raise ValueError("allocation bytes must be positive")
        young_cap = self.config.young_capacity
        if nbytes > young_cap:
            if allocation.kind is AllocationKind.TEMPORARY:
                raise ValueError(
                    "temporary allocation larger than the young generation"
                )
            self._allocate_old_direct(allocation)
            return
        if self.young_used + nbytes > young_cap:
            self.minor_gc()
        if allocation.kind is AllocationKind.TEMPORARY:
            self.young_temp += nbytes
        else:
            self.young_ll[allocation.owner] = (
                self.young_ll.get(allocation.owner, 0) + nbytes
            )
            self.young_ll_total += nbytes

    def _allocate_old_direct(self, allocation: Allocation) -> None:
        # Oversized long-living allocations skip the young generation.
        if self.old_used + allocation.bytes > self.config.old_capacity:
            self.full_gc()
        if self.old_used + allocation.bytes > self.config.old_capacity:
            raise OutOfMemory(
                f"{allocation.bytes} long-living bytes cannot fit "
                f"({self.old_used} used of {self.config.old_capacity})"
            )
        self.old_ll[allocation.owner] = (
            self.old_ll.get(allocation.owner, 0) + allocation.bytes
        )
        self.old_ll_total += allocation.bytes

    def minor_gc(self) -> GcEvent:
        """Collect the young generation, promoting live long-living bytes.

        If the promotion would overflow the old generation, a full collection
        runs instead (and subsumes the minor one); if even that cannot make
        room, OutOfMemory is raised.
        """
        promoted = self.young_ll_total
        if self.old_used + promoted > self.config.old_capacity:
            event = self.full_gc()
            if self.old_ll_total > self.config.old_capacity:
                raise OutOfMemory(
                    f"{self.old_ll_total} live long-living bytes exceed the "
                    f"old-generation capacity {self.config.old_capacity}"
                )
            return event
        self.young_temp = 0
        self.young_dead = 0
        for owner, nbytes in self.young_ll.items():
            self.old_ll[owner] = self.old_ll.get(owner, 0) + nbytes
        self.young_ll.clear()
        self.old_ll_total += promoted
        self.young_ll_total = 0
        pause = int(promoted * self.config.minor_pause_ns_per_surviving_byte)
        # Heap usage right after a minor collection stands in for the
        # long-living estimate; dead old bytes are still counted here.
        self.long_living_fraction = self.old_used / self.config.total_bytes
        event = self._log(GcKind.MINOR, promoted, pause)
        if self.old_used > self.config.full_gc_threshold * self.config.old_capacity:
            self.full_gc()
        return event

    def full_gc(self) -> GcEvent:
        """Collect the whole heap and revise the long-living estimate."""
        live = self.live_long_living
        reclaimed = self.young_temp + self.young_dead + self.old_dead
        self.young_temp = 0
        self.young_dead = 0
        self.old_dead = 0
        for owner, nbytes in self.young_ll.items():
            self.old_ll[owner] = self.old_ll.get(owner, 0) + nbytes
        self.young_ll.clear()
        self.old_ll_total += self.young_ll_total
        self.young_ll_total = 0
        pause = int(live * self.config.full_pause_ns_per_live_byte)
        self.long_living_fraction = live / self.config.total_bytes
        self.pending_full_gc = True
        return self._log(GcKind.FULL, reclaimed, pause)

    def _log(self, kind: GcKind, moved: int, pause: int) -> GcEvent:
        event = GcEvent(
            kind=kind,
            promoted_or_reclaimed_bytes=moved,
            pause_ns=pause,
            heap_usage_after=(self.young_used + self.old_used) / self.config.total_bytes,
            long_living_fraction_after=self.long_living_fraction,
            time_ns=self.now_ns,
        )
        self.gc_log.append(event)
        self.cumulative_gc_pause_ns += pause
        self.pending_pause_ns += pause
        return event

    def pressure_level(self) -> PressureLevel:
        if self.long_living_fraction < self.config.yellow:
            return PressureLevel.NORMAL
        if self.long_living_fraction < self.config.red:
            return PressureLevel.YELLOW
        return PressureLevel.RED

    def free_task_memory(self, owner: object) -> None:
        """Mark all of an owner's long-living bytes dead (reclaimed at GCs)."""
        young = self.young_ll.pop(owner, None)
        if young:
            self.young_dead += young
            self.young_ll_total -= young
        old = self.old_ll.pop(owner, None)
        if old:
            self.old_dead += old
            self.old_ll_total -= old

    def free_owner_bytes(self, owner: object, nbytes: int) -> None:
        """Mark part of an owner's long-living bytes dead (spill support)."""
        remaining = nbytes
        young = self.young_ll.get(owner, 0)
        take = min(young, remaining)
        if take:
            if take == young:
                self.young_ll.pop(owner)
            else:
                self.young_ll[owner] = young - take
            self.young_ll_total -= take
            self.young_dead += take
            remaining -= take
        if remaining <= 0:
            return
        old = self.old_ll.get(owner, 0)
        take = min(old, remaining)
        if take:
            if take == old:
                self.old_ll.pop(owner)
            else:
                self.old_ll[owner] = old - take
            self.old_ll_total -= take
            self.old_dead += take
            remaining -= take
        if remaining > 0:
            raise ValueError(
                f"owner {owner!r} holds fewer live bytes than freed ({nbytes})"
            )
