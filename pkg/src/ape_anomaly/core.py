"""Event schema, per-type vocabularies and event encoding.

An event is a fixed-length tuple with one categorical entity per type.
Encoded events are ``int64`` arrays of shape ``(m,)``, or ``(n, m)`` for
a batch; index ``arity_i`` of type ``i`` is the reserved UNK slot.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .exceptions import SchemaMismatchError, UnknownEntityError

UNK_TOKEN = "<UNK>"


@dataclass(frozen=True)
class EventSchema:
    """Ordered entity types. Arities live on the :class:`Vocabulary`."""

    types: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "types", tuple(str(t) for t in self.types))
        if len(self.types) < 2:
            raise ValueError(f"a schema needs at least 2 entity types, got {len(self.types)}")
        if len(set(self.types)) != len(self.types):
            raise ValueError(f"duplicate type names in schema: {list(self.types)}")

    @property
    def m(self) -> int:
        return len(self.types)

    def index(self, name: str) -> int:
        return self.types.index(name)

    def to_dict(self) -> dict:
        return {"types": list(self.types)}

    @classmethod
    def from_dict(cls, obj) -> "EventSchema":
        if isinstance(obj, dict):
            obj = obj["types"]
        return cls(tuple(obj))


@dataclass
class Vocabulary:
    """Bidirectional entity maps and unigram counts, one per type.

    Indices are dense and assigned in first-seen order. Each type also owns
    one UNK index equal to its arity.
    """

    schema: EventSchema
    entities: list[list[str]]
    counts: list[np.ndarray]
    n_events: int = 0
    _index: list[dict[str, int]] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if len(self.entities) != self.schema.m or len(self.counts) != self.schema.m:
            raise SchemaMismatchError("vocabulary does not match the schema's type count")
        self.counts = [np.asarray(c, dtype=np.int64) for c in self.counts]
        self._index = [{e: i for i, e in enumerate(ents)} for ents in self.entities]
        for i, ents in enumerate(self.entities):
            if len(self._index[i]) != len(ents):
                raise ValueError(f"duplicate entities for type {self.schema.types[i]!r}")
            if len(self.counts[i]) != len(ents):
                raise ValueError(f"count vector length mismatch for type {self.schema.types[i]!r}")

    @property
    def arities(self) -> tuple[int, ...]:
        return tuple(len(e) for e in self.entities)

    def unk_index(self, type_i: int) -> int:
        return len(self.entities[type_i])

    def lookup(self, type_i: int, value: str) -> int | None:
        return self._index[type_i].get(value)

    def entity(self, type_i: int, index: int) -> str:
        if index == len(self.entities[type_i]):
            return UNK_TOKEN
        return self.entities[type_i][index]

    def to_dict(self) -> dict:
        return {
            "n_events": int(self.n_events),
            "entities": [list(e) for e in self.entities],
            "counts": [c.tolist() for c in self.counts],
        }

    @classmethod
    def from_dict(cls, schema: EventSchema, obj: dict) -> "Vocabulary":
        return cls(schema, [list(e) for e in obj["entities"]], obj["counts"], int(obj["n_events"]))


def build_vocabulary(events: Iterable[Sequence[str]], schema: EventSchema) -> Vocabulary:
    """Count entities per type over a stream of raw events.

    Raises :class:`SchemaMismatchError` naming the first record (1-based)
    whose field count differs from the schema.
    """
    m = schema.m
    index: list[dict[str, int]] = [{} for _ in range(m)]
    counts: list[list[int]] = [[] for _ in range(m)]
    n = 0
    for n, raw in enumerate(events, start=1):
        if len(raw) != m:
            raise SchemaMismatchError(
                f"record {n} has {len(raw)} fields, schema expects {m}", record=n
            )
        for i, value in enumerate(raw):
            j = index[i].get(value)
            if j is None:
                index[i][value] = len(counts[i])
                counts[i].append(1)
            else:
                counts[i][j] += 1
    entities = [list(ix) for ix in index]  # dicts preserve insertion order
    return Vocabulary(schema, entities, [np.array(c, dtype=np.int64) for c in counts], n)


def encode_event(raw: Sequence[str], vocab: Vocabulary, allow_unk: bool = False) -> np.ndarray:
    m = vocab.schema.m
    if len(raw) != m:
        raise SchemaMismatchError(f"event has {len(raw)} fields, schema expects {m}")
    out = np.empty(m, dtype=np.int64)
    for i, value in enumerate(raw):
        j = vocab.lookup(i, value)
        if j is None:
            if not allow_unk:
                raise UnknownEntityError(vocab.schema.types[i], value)
            j = vocab.unk_index(i)
        out[i] = j
    return out


def encode_events(rows: Iterable[Sequence[str]], vocab: Vocabulary, allow_unk: bool = False) -> np.ndarray:
    """Batch version of :func:`encode_event`; returns an ``(n, m)`` array."""
    encoded = [encode_event(r, vocab, allow_unk) for r in rows]
    if not encoded:
        return np.empty((0, vocab.schema.m), dtype=np.int64)
    return np.stack(encoded)


def decode_event(event: Sequence[int], vocab: Vocabulary) -> tuple[str, ...]:
    return tuple(vocab.entity(i, int(a)) for i, a in enumerate(event))


def validate_events(events: np.ndarray, arities: Sequence[int], allow_unk: bool = True) -> np.ndarray:
    """Check an encoded batch against per-type arities; returns it as int64 (n, m)."""
    events = np.asarray(events, dtype=np.int64)
    if events.ndim == 1:
        events = events[None, :]
    if events.ndim != 2 or events.shape[1] != len(arities):
        raise SchemaMismatchError(
            f"expected encoded events of shape (n, {len(arities)}), got {events.shape}"
        )
    upper = np.asarray(arities) + (1 if allow_unk else 0)
    if events.size and ((events < 0).any() or (events >= upper).any()):
        raise ValueError("encoded event index out of range for its type")
    return events
