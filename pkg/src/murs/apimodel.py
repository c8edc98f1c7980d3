"""Function-API semantics and their memory-usage models.

Every operator is described by how it treats keys and values: whether it
distinguishes the key (shuffle-like), whether it aggregates all values that
share a key, and whether its results stay cached in memory. Those properties,
together with the key-appearance pattern of the input, classify the operator
into one of four growth models for its long-living footprint: constant,
sub-linear, linear, or super-linear.

The classification rules:

* no key distinction and no caching: nothing is retained, constant.
* key distinction with value aggregation: the buffer grows only on keys not
  seen before, so under randomly appearing keys growth is sub-linear. When
  equal keys arrive clustered (or never repeat), each record effectively
  brings a new key and growth is linear.
* key distinction without aggregation: every record appends to its key's
  collection, linear.
* no key distinction but cached results: growth follows the cached output
  size relative to the input - shrinking output is sub-linear, same-size is
  linear, growing output is super-linear.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

from .kvdata import KeyPattern


class ModelKind(enum.IntEnum):
    """Growth-model kinds, ordered from lightest to heaviest."""

    CONSTANT = 0
    SUB_LINEAR = 1
    LINEAR = 2
    SUPER_LINEAR = 3


class OutputGrowth(enum.Enum):
    SHRINKING = "shrinking"
    SAME_SIZE = "same_size"
    GROWING = "growing"


class PhaseAffinity(enum.Enum):
    READ = "read"
    PROCESS = "process"
    WRITE = "write"


class SemanticsError(ValueError):
    """Raised for API semantics that violate the property-space invariants."""


@dataclass(frozen=True)
class MemoryModel:
    """A growth-model kind plus, for linear models, a slope hint.

    The slope hint is a declared default (bytes of long-living data per input
    byte); at scheduling time the sampler's measured rate always overrides it.
    A steeper slope within the same kind means a heavier task.
    """

    kind: ModelKind
    slope_hint: float = 0.0

    def __post_init__(self) -> None:
        if self.kind is ModelKind.CONSTANT and self.slope_hint != 0.0:
            raise SemanticsError("constant model must have slope_hint 0")
        if self.slope_hint < 0:
            raise SemanticsError("slope_hint must be non-negative")

    @property
    def weight(self) -> tuple[int, float]:
        """Sort key for heaviness comparisons across models."""
        return (int(self.kind), self.slope_hint)


@dataclass(frozen=True)
class ApiSemantics:
    name: str
    distinguishes_key: bool
    aggregates_value: bool
    caches_result: bool
    output_growth: OutputGrowth = OutputGrowth.SAME_SIZE

    def validate(self) -> None:
        if self.aggregates_value and not self.distinguishes_key:
            raise SemanticsError(
                f"{self.name}: aggregation is defined over all values sharing "
                "a key, so aggregates_value requires distinguishes_key"
            )


def classify(semantics: ApiSemantics, key_pattern: KeyPattern) -> MemoryModel:
    """Classify an API into its memory-usage model for a given key pattern."""
    semantics.validate()
    if not semantics.distinguishes_key:
        if not semantics.caches_result:
            return MemoryModel(ModelKind.CONSTANT)
        # Cached per-record results: growth follows output size vs input size.
        if semantics.output_growth is OutputGrowth.SHRINKING:
            return MemoryModel(ModelKind.SUB_LINEAR, 0.5)
        if semantics.output_growth is OutputGrowth.GROWING:
            return MemoryModel(ModelKind.SUPER_LINEAR, 1.0)
        return MemoryModel(ModelKind.LINEAR, 1.0)
    if semantics.aggregates_value:
        if key_pattern is KeyPattern.RANDOM:
            return MemoryModel(ModelKind.SUB_LINEAR, 0.5)
        # Clustered or never-repeating keys: each record keeps bringing keys
        # the buffer has not absorbed yet, so growth degenerates to linear.
        return MemoryModel(ModelKind.LINEAR, 1.0)
    return MemoryModel(ModelKind.LINEAR, 1.0)


@dataclass(frozen=True)
class ApiCatalogEntry:
    semantics: ApiSemantics
    model: MemoryModel
    phase_affinity: PhaseAffinity
    aliases: tuple[str, ...] = field(default=())

    @property
    def name(self) -> str:
        return self.semantics.name

    @property
    def is_shuffle(self) -> bool:
        return self.semantics.distinguishes_key


def _entry(
    name: str,
    distinguishes_key: bool,
    aggregates_value: bool,
    affinity: PhaseAffinity,
    growth: OutputGrowth = OutputGrowth.SAME_SIZE,
    aliases: tuple[str, ...] = (),
) -> ApiCatalogEntry:
    sem = ApiSemantics(name, distinguishes_key, aggregates_value, False, growth)
    return ApiCatalogEntry(sem, classify(sem, KeyPattern.RANDOM), affinity, aliases)


def builtin_catalog() -> list[ApiCatalogEntry]:
    """The built-in operator catalog.

    Alias names map operators from other dataflow systems onto the same
    semantics (the models are independent of the concrete system). Every
    entry's stored model equals its classification under random keys.
    """
    return [
        _entry("map", False, False, PhaseAffinity.PROCESS,
               aliases=("parallelDo",)),
        _entry("filter", False, False, PhaseAffinity.PROCESS,
               growth=OutputGrowth.SHRINKING, aliases=("where",)),
        _entry("flatMap", False, False, PhaseAffinity.PROCESS,
               growth=OutputGrowth.GROWING),
        _entry("reduceByKey", True, True, PhaseAffinity.WRITE,
               growth=OutputGrowth.SHRINKING,
               aliases=("reduce", "combinValue", "combineValue")),
        _entry("distinct", True, True, PhaseAffinity.WRITE,
               growth=OutputGrowth.SHRINKING),
        _entry("groupByKey", True, False, PhaseAffinity.WRITE),
        _entry("sortByKey", True, False, PhaseAffinity.READ),
        # join buffers one side while streaming the other; we fix the buffered
        # side at the read phase.
        _entry("join", True, False, PhaseAffinity.READ,
               growth=OutputGrowth.GROWING),
    ]


_CATALOG_INDEX: dict[str, ApiCatalogEntry] | None = None


def catalog_lookup(name: str) -> ApiCatalogEntry:
    global _CATALOG_INDEX
    if _CATALOG_INDEX is None:
        _CATALOG_INDEX = {}
        for entry in builtin_catalog():
            _CATALOG_INDEX[entry.name] = entry
            for alias in entry.aliases:
                _CATALOG_INDEX[alias] = entry
    try:
        return _CATALOG_INDEX[name]
    except KeyError:
        raise SemanticsError(f"unknown API name: {name!r}") from None


def task_model_sequence(
    pipeline: list[ApiCatalogEntry],
    caches: bool = False,
    key_pattern: KeyPattern = KeyPattern.RANDOM,
) -> list[MemoryModel]:
    """Per-phase model sequence (read, process..., write) for one task.

    Shuffle-capable entries may only appear at the head (acting as the read
    side of the incoming shuffle) or at the tail (write side of the outgoing
    shuffle). Process-phase constant models are elided when the write phase
    holds a shuffle buffer, since the buffer dwarfs them; a caching process
    phase contributes its redefined model instead.
    """
    if not pipeline:
        raise SemanticsError("pipeline must be nonempty")
    for i, entry in enumerate(pipeline):
        if entry.is_shuffle and 0 < i < len(pipeline) - 1:
            raise SemanticsError(
                f"shuffle API {entry.name!r} in the middle of a pipeline; "
                "stage boundaries must coincide with shuffle operations"
            )

    read_model: MemoryModel | None = None
    write_model: MemoryModel | None = None
    body = list(pipeline)
    if len(body) == 1 and body[0].is_shuffle:
        # Head and tail coincide; the entry's declared affinity picks the side.
        model = classify(body[0].semantics, key_pattern)
        if body[0].phase_affinity is PhaseAffinity.READ:
            read_model = model
        else:
            write_model = model
        body = []
    else:
        if body and body[0].is_shuffle:
            read_model = classify(body[0].semantics, key_pattern)
            body = body[1:]
        if body and body[-1].is_shuffle:
            write_model = classify(body[-1].semantics, key_pattern)
            body = body[:-1]

    process_models = []
    for entry in body:
        if entry.is_shuffle:
            raise SemanticsError("at most one shuffle at head and one at tail")
        if caches:
            sem = ApiSemantics(
                entry.semantics.name,
                entry.semantics.distinguishes_key,
                entry.semantics.aggregates_value,
                True,
                entry.semantics.output_growth,
            )
            process_models.append(classify(sem, key_pattern))
        else:
            process_models.append(classify(entry.semantics, key_pattern))

    shuffle_write = write_model is not None and write_model.kind != ModelKind.CONSTANT
    if shuffle_write:
        process_models = [m for m in process_models if m.kind != ModelKind.CONSTANT]

    sequence = []
    if read_model is not None:
        sequence.append(read_model)
    sequence.extend(process_models)
    if write_model is not None:
        sequence.append(write_model)
    return sequence
