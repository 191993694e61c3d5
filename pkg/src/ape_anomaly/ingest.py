"""Reading event logs into encoded datasets, and the new-event test filter."""
from __future__ import annotations

import csv
import io
import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO, Iterable, Sequence

import numpy as np

from .core import EventSchema, Vocabulary, build_vocabulary, decode_event, encode_events
from .exceptions import ParseError

logger = logging.getLogger(__name__)

FORMATS = ("jsonl", "csv")


@dataclass
class ParseStats:
    lines: int = 0
    events: int = 0
    blank: int = 0
    malformed: list[tuple[int, str]] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "lines": self.lines,
            "events": self.events,
            "blank": self.blank,
            "malformed": len(self.malformed),
            "malformed_lines": [ln for ln, _ in self.malformed[:20]],
        }


@dataclass
class Dataset:
    """Encoded events plus the vocabulary they were encoded against.

    ``raw`` keeps the original strings so that set operations on events
    stay exact even where distinct unseen entities share the UNK index.
    """

    schema: EventSchema
    vocab: Vocabulary
    events: np.ndarray
    raw: list[tuple[str, ...]] | None = None
    source: str | None = None
    stats: ParseStats | None = None
    allow_unk: bool = False

    def __len__(self) -> int:
        return len(self.events)

    def rows(self) -> list[tuple[str, ...]]:
        if self.raw is not None:
            return self.raw
        return [decode_event(e, self.vocab) for e in self.events]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        raw = None if self.raw is None else [self.raw[i] for i in idx]
        return Dataset(self.schema, self.vocab, self.events[idx], raw, self.source, self.stats, self.allow_unk)

    @classmethod
    def from_rows(
        cls,
        rows: Sequence[Sequence[str]],
        schema: EventSchema,
        vocab: Vocabulary | None = None,
        allow_unk: bool = False,
        source: str | None = None,
        stats: ParseStats | None = None,
    ) -> "Dataset":
        rows = [tuple(r) for r in rows]
        if vocab is None:
            vocab = build_vocabulary(rows, schema)
        events = encode_events(rows, vocab, allow_unk=allow_unk)
        return cls(schema, vocab, events, rows, source, stats, allow_unk)


def infer_format(path) -> str:
    suffix = Path(path).suffix.lower()
    if suffix in (".jsonl", ".ndjson", ".json"):
        return "jsonl"
    if suffix in (".csv",):
        return "csv"
    raise ValueError(f"cannot infer event format from {str(path)!r}; pass --format")


def parse_events(
    source: BinaryIO | bytes | str | os.PathLike,
    fmt: str,
    schema: EventSchema,
    strict: bool = False,
) -> tuple[list[tuple[str, ...]], ParseStats]:
    """Parse a CSV or JSONL event log into string tuples in schema order.

    Blank lines are skipped. Malformed lines are recorded in the returned
    stats and skipped, or raise :class:`ParseError` when ``strict``.
    """
    if fmt not in FORMATS:
        raise ValueError(f"unknown format {fmt!r}; expected one of {FORMATS}")
    if isinstance(source, (str, os.PathLike)):
        with open(source, "rb") as fh:
            return parse_events(fh, fmt, schema, strict)
    if isinstance(source, bytes):
        source = io.BytesIO(source)
    text = io.TextIOWrapper(source, encoding="utf-8", newline="")
    try:
        if fmt == "csv":
            return _parse_csv(text, schema, strict)
        return _parse_jsonl(text, schema, strict)
    finally:
        text.detach()


def _malformed(stats: ParseStats, line: int, reason: str, strict: bool):
    if strict:
        raise ParseError(reason, line=line)
    stats.malformed.append((line, reason))


def _parse_csv(text, schema, strict):
    stats = ParseStats()
    reader = csv.reader(text)
    header = None
    for row in reader:
        if not row or all(not c.strip() for c in row):
            stats.blank += 1
            continue
        header = [h.strip() for h in row]
        break
    if header is None:
        return [], stats
    missing = [t for t in schema.types if t not in header]
    if missing:
        raise ParseError(f"CSV header {header} lacks schema types {missing}", line=reader.line_num)
    cols = [header.index(t) for t in schema.types]
    out = []
    for row in reader:
        line = reader.line_num
        if not row or (len(row) == 1 and not row[0].strip()):
            stats.blank += 1
            continue
        if len(row) != len(header):
            _malformed(stats, line, f"expected {len(header)} columns, got {len(row)}", strict)
            continue
        out.append(tuple(row[c] for c in cols))
    stats.lines = reader.line_num
    stats.events = len(out)
    return out, stats


def _parse_jsonl(text, schema, strict):
    stats = ParseStats()
    out = []
    line = 0
    for line, s in enumerate(text, start=1):
        if not s.strip():
            stats.blank += 1
            continue
        try:
            obj = json.loads(s)
        except json.JSONDecodeError as exc:
            _malformed(stats, line, f"invalid JSON: {exc.msg}", strict)
            continue
        if not isinstance(obj, dict):
            _malformed(stats, line, "expected a JSON object", strict)
            continue
        try:
            values = tuple(obj[t] for t in schema.types)
        except KeyError as exc:
            _malformed(stats, line, f"missing key {exc.args[0]!r}", strict)
            continue
        if not all(isinstance(v, str) for v in values):
            _malformed(stats, line, "entity values must be strings", strict)
            continue
        out.append(values)
    stats.lines = line
    stats.events = len(out)
    return out, stats


def load_dataset(
    path,
    schema: EventSchema,
    fmt: str | None = None,
    vocab: Vocabulary | None = None,
    allow_unk: bool = False,
    strict: bool = False,
) -> Dataset:
    """Parse ``path`` and encode it. Without ``vocab`` one is built from the file."""
    fmt = fmt or infer_format(path)
    rows, stats = parse_events(path, fmt, schema, strict=strict)
    if stats.malformed:
        logger.warning("%s: skipped %d malformed lines", path, len(stats.malformed))
    return Dataset.from_rows(rows, schema, vocab, allow_unk=allow_unk, source=str(path), stats=stats)


def write_jsonl(rows: Iterable[Sequence[str]], schema: EventSchema, fh) -> int:
    n = 0
    for row in rows:
        fh.write(json.dumps(dict(zip(schema.types, row)), ensure_ascii=False))
        fh.write("\n")
        n += 1
    return n


def filter_new_events(train: Dataset, test: Dataset, dedup: bool = True) -> Dataset:
    """Test events whose full tuple never occurs in ``train``.

    With ``dedup`` each distinct new event is kept once, in first-seen order.
    """
    if train.schema != test.schema:
        raise ValueError("train and test datasets use different schemas")
    seen = set(train.rows())
    keep = []
    for i, row in enumerate(test.rows()):
        if row in seen:
            continue
        if dedup:
            seen.add(row)
        keep.append(i)
    return test.subset(keep)


def dataset_stats(d: Dataset, reference: Dataset | None = None) -> dict:
    rows = d.rows()
    stats = {
        "events": len(rows),
        "distinct_events": len(set(rows)),
        "distinct_entities": {t: len({r[i] for r in rows}) for i, t in enumerate(d.schema.types)},
    }
    if reference is not None:
        ref = set(reference.rows())
        new = sum(1 for r in rows if r not in ref)
        stats["new_events"] = new
        stats["new_distinct_events"] = len({r for r in rows if r not in ref})
        stats["new_percent"] = 100.0 * new / len(rows) if rows else 0.0
    return stats


def split_validation(d: Dataset, fraction: float, rng: np.random.Generator) -> tuple[Dataset, Dataset]:
    """Hold out a random ``fraction`` of events (at least one train event stays)."""
    if not 0.0 <= fraction < 1.0:
        raise ValueError(f"validation fraction must lie in [0, 1), got {fraction}")
    n = len(d)
    n_val = min(int(round(fraction * n)), max(n - 1, 0))
    perm = rng.permutation(n)
    return d.subset(np.sort(perm[n_val:])), d.subset(np.sort(perm[:n_val]))
