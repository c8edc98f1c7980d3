"""Deterministic synthetic key-value datasets.

Datasets are never materialized up front: records are regenerated from the
seed on every iteration, so a dataset can be streamed split by split without
holding anything in memory. Keys are fixed-width 8-byte encodings of integers
drawn from a configurable key universe; values are pseudo-random bytes of a
fixed size, represented compactly as a 64-bit content token plus the declared
byte length (``Record.value_bytes`` expands the token to the actual bytes when
someone needs them).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Iterator, NamedTuple

KEY_WIDTH = 8
DEFAULT_RECORD_OVERHEAD = 16

_MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15


def sm64(x: int) -> int:
    """Single splitmix64 finalizer round; the hot-path mixer."""
    x &= _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def mix64(*parts: int) -> int:
    """Deterministic 64-bit mix of integer parts (splitmix64 chain)."""
    z = GOLDEN
    for p in parts:
        z = (z + (p & _MASK64) + GOLDEN) & _MASK64
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        z = z ^ (z >> 31)
    return z


class KeyPattern(enum.Enum):
    RANDOM = "random"
    CLUSTERED = "clustered"
    ALL_UNIQUE = "all_unique"


class SpecificationError(ValueError):
    """Raised for invalid dataset or split specifications."""


class Record(NamedTuple):
    """One key-value record with its byte-accounted size.

    ``size_bytes`` is key width + value bytes + the per-run record overhead
    constant, fixed at creation time. ``grouped`` marks records whose value is
    a collection built by a grouping operator; merging such records must add
    their collection bytes verbatim instead of wrapping them again.
    """

    key: int
    value: int
    size_bytes: int
    grouped: bool = False

    def key_bytes(self) -> bytes:
        return self.key.to_bytes(KEY_WIDTH, "big")

    def value_bytes(self, value_size: int) -> bytes:
        """Materialize the pseudo-random value bytes this token stands for."""
        out = bytearray()
        word = self.value
        while len(out) < value_size:
            word = mix64(word)
            out.extend(word.to_bytes(8, "big"))
        return bytes(out[:value_size])


@dataclass(frozen=True)
class DatasetSpec:
    record_count: int
    key_cardinality: int
    key_pattern: KeyPattern
    value_size_bytes: int
    seed: int

    def validate(self) -> None:
        if self.record_count <= 0:
            raise SpecificationError("record_count must be positive")
        if self.key_cardinality <= 0:
            raise SpecificationError("key_cardinality must be positive")
        if self.value_size_bytes <= 0:
            raise SpecificationError("value_size_bytes must be positive")
        if (
            self.key_pattern is KeyPattern.ALL_UNIQUE
            and self.key_cardinality != self.record_count
        ):
            raise SpecificationError(
                "ALL_UNIQUE requires key_cardinality == record_count"
            )


@dataclass(frozen=True)
class Split:
    """A contiguous record range [start, end) of one dataset."""

    dataset_id: int
    start: int
    end: int
    total_bytes: int

    @property
    def record_count(self) -> int:
        return self.end - self.start


class Dataset:
    """Lazily regenerated record stream for a DatasetSpec.

    All records of one dataset have the same size (the key-value pairs
    "have the similar size" assumption), so byte totals are exact products.
    """

    def __init__(self, spec: DatasetSpec, overhead_bytes: int = DEFAULT_RECORD_OVERHEAD):
        spec.validate()
        if overhead_bytes < 0:
            raise SpecificationError("overhead_bytes must be non-negative")
        self.spec = spec
        self.overhead_bytes = overhead_bytes
        self.record_size = KEY_WIDTH + spec.value_size_bytes + overhead_bytes
        self.total_bytes = self.record_size * spec.record_count
        self._base = mix64(spec.seed, 0x5EED)
        self._value_base = self._base ^ 0xA5A5A5A5A5A5A5A5
        self._clustered_order: list[int] | None = None

    @property
    def dataset_id(self) -> int:
        return mix64(self.spec.seed, self.spec.record_count, self.spec.key_cardinality)

    def _key_order(self) -> list[int]:
        # Deterministic Fisher-Yates shuffle of the key universe, so clustered
        # runs do not appear in numeric key order.
        if self._clustered_order is None:
            n = min(self.spec.key_cardinality, self.spec.record_count)
            order = list(range(n))
            for i in range(n - 1, 0, -1):
                j = mix64(self.spec.seed, 0xC1, i) % (i + 1)
                order[i], order[j] = order[j], order[i]
            self._clustered_order = order
        return self._clustered_order

    def key_at(self, index: int) -> int:
        spec = self.spec
        pattern = spec.key_pattern
        if pattern is KeyPattern.RANDOM:
            return sm64(self._base + index * GOLDEN) % spec.key_cardinality
        if pattern is KeyPattern.ALL_UNIQUE:
            return index
        # Clustered: equal keys occupy one contiguous run each, balanced runs.
        n_keys = min(spec.key_cardinality, spec.record_count)
        run = index * n_keys // spec.record_count
        return self._key_order()[run]

    def record_at(self, index: int) -> Record:
        token = sm64(self._value_base + index * GOLDEN)
        return Record(self.key_at(index), token, self.record_size)

    def iter_records(self, start: int = 0, end: int | None = None) -> Iterator[Record]:
        if end is None:
            end = self.spec.record_count
        spec = self.spec
        size = self.record_size
        base = self._base
        vbase = self._value_base
        if spec.key_pattern is KeyPattern.RANDOM:
            card = spec.key_cardinality
            for i in range(start, end):
                yield Record(
                    sm64(base + i * GOLDEN) % card, sm64(vbase + i * GOLDEN), size
                )
        elif spec.key_pattern is KeyPattern.ALL_UNIQUE:
            for i in range(start, end):
                yield Record(i, sm64(vbase + i * GOLDEN), size)
        else:
            n_keys = min(spec.key_cardinality, spec.record_count)
            order = self._key_order()
            count = spec.record_count
            for i in range(start, end):
                yield Record(
                    order[i * n_keys // count], sm64(vbase + i * GOLDEN), size
                )

    def iter_split(self, split: Split) -> Iterator[Record]:
        return self.iter_records(split.start, split.end)


def generate(spec: DatasetSpec, overhead_bytes: int = DEFAULT_RECORD_OVERHEAD) -> Dataset:
    """Validate the spec and return the (lazy) dataset for it."""
    return Dataset(spec, overhead_bytes)


def split_dataset(dataset: Dataset, n: int) -> list[Split]:
    """Partition the dataset's record range into n splits, sizes differing by at most 1."""
    if n <= 0:
        raise SpecificationError("split count must be >= 1")
    count = dataset.spec.record_count
    base, extra = divmod(count, n)
    splits = []
    start = 0
    for i in range(n):
        length = base + (1 if i < extra else 0)
        end = start + length
        splits.append(
            Split(dataset.dataset_id, start, end, length * dataset.record_size)
        )
        start = end
    return splits
