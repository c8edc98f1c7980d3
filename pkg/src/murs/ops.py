"""Pure per-record operator semantics.

These functions define what each catalog API *computes* on records, kept
separate from the engine so that the same semantics can be replayed by the
unscheduled reference runner. Every cross-record combination (aggregation,
grouping, dedup) is commutative and associative on purpose: task scheduling,
suspension, and spilling reorder record interleavings, and outputs must not
depend on that order.

Records are (key, value-token, size) triples; value tokens are 64-bit mixes
standing in for opaque value bytes. Sizes are byte-accounted explicitly:
an aggregated value has a fixed size, a grouped value is the sum of its
members' bytes plus a per-member entry overhead.
"""

from __future__ import annotations

from dataclasses import dataclass

from .kvdata import GOLDEN, KEY_WIDTH, Record, sm64

AGG_VALUE_BYTES = 8

_MAP_SALT = 0x11
_FLATMAP_SALT = 0x22
_FILTER_SALT = 0x33
_DISTINCT_SALT = 0x44
_CACHE_SALT = 0x55


@dataclass(frozen=True)
class MapParams:
    salt: int = _MAP_SALT


@dataclass(frozen=True)
class FilterParams:
    keep_percent: int = 50
    salt: int = _FILTER_SALT


@dataclass(frozen=True)
class FlatMapParams:
    fanout: int = 3
    child_value_bytes: int = 8
    key_cardinality: int = 1 << 16
    salt: int = _FLATMAP_SALT


def value_size_of(record: Record, overhead: int) -> int:
    return record.size_bytes - KEY_WIDTH - overhead


def map_record(record: Record, params: MapParams) -> Record:
    """Same key, transformed value, same size."""
    return Record(
        record.key, sm64(record.value + params.salt * GOLDEN), record.size_bytes
    )


def filter_keeps(record: Record, params: FilterParams) -> bool:
    """Deterministic predicate on the key, keeping keep_percent of keys."""
    return sm64(record.key * GOLDEN + params.salt) % 100 < params.keep_percent


def flatmap_children(record: Record, params: FlatMapParams, overhead: int) -> list[Record]:
    """Emit ``fanout`` derived records per input record."""
    size = KEY_WIDTH + params.child_value_bytes + overhead
    card = params.key_cardinality
    kbase = record.key * GOLDEN + params.salt
    vbase = record.value * GOLDEN + params.salt
    return [
        Record(sm64(kbase + j) % card, sm64(vbase + j), size)
        for j in range(params.fanout)
    ]


def cache_record(record: Record) -> Record:
    """The block entry cached for a record (same size, derived value)."""
    return Record(
        record.key, sm64(record.value + _CACHE_SALT * GOLDEN), record.size_bytes
    )


# -- commutative folds used by shuffle buffers --------------------------------

def agg_combine_token(current: int | None, token: int) -> int:
    """Aggregate a value into a per-key accumulator (xor: order-free)."""
    return token if current is None else current ^ token


def distinct_token(key: int) -> int:
    """The canonical representative value for a deduplicated key."""
    return sm64(key * GOLDEN + _DISTINCT_SALT)


def agg_output_record(key: int, token: int, overhead: int) -> Record:
    """Aggregated values have a fixed size regardless of input count."""
    return Record(key, token, KEY_WIDTH + AGG_VALUE_BYTES + overhead)


def group_member_bytes(record: Record, overhead: int, entry_overhead: int) -> int:
    """Collection bytes one record contributes to its key's group.

    A plain record contributes its value bytes plus the per-member entry
    overhead. A record that is itself a group (from an upstream grouping
    stage) contributes its collection bytes unchanged, so merged groups are
    byte-identical no matter how the upstream work was partitioned.
    """
    if record.grouped:
        return value_size_of(record, overhead)
    return value_size_of(record, overhead) + entry_overhead


def group_output_record(key: int, token: int, member_bytes: int, overhead: int) -> Record:
    """A grouped record: collection bytes become the value size."""
    return Record(key, token, KEY_WIDTH + member_bytes + overhead, grouped=True)
