"""Streaming readers for rating and category-metadata record files.

Sources are newline-delimited (JSON objects or CSV rows), optionally
gzip-compressed. Malformed lines are tallied and skipped, never silently
dropped; unreadable sources and unknown format tags are fatal.
"""

from __future__ import annotations

import csv
import gzip
import io
import json
import sys
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Iterable, Iterator

from .quarters import DATASET_EPOCH_MAX, DATASET_EPOCH_MIN

FORMATS = ("jsonl", "csv")

GZIP_MAGIC = b"\x1f\x8b"


class UnknownFormatError(ValueError):
    pass


@dataclass(frozen=True)
class RatingRecord:
    """One user's rating of one item at a UTC timestamp."""

    user_id: str
    item_id: str
    rating: int
    timestamp: int


@dataclass(frozen=True)
class ItemCategories:
    """An item and its cleaned category labels (sorted, deduplicated)."""

    item_id: str
    categories: tuple[str, ...]


@dataclass
class RatingFields:
    """Column/key names in the rating source."""

    user: str = "user"
    item: str = "item"
    rating: str = "rating"
    time: str = "time"


@dataclass
class MetaFields:
    """Column/key names in the metadata source; CSV categories are '|'-joined."""

    item: str = "item"
    categories: str = "categories"


@dataclass
class ParseTally:
    """Per-stream accounting of skipped lines. Mutated while streaming."""

    lines: int = 0
    malformed: int = 0
    reasons: Counter = field(default_factory=Counter)

    def reject(self, reason: str) -> None:
        self.malformed += 1
        self.reasons[reason] += 1


def open_text(path: str | Path) -> IO[str]:
    """Open a record file as text, transparently decompressing gzip."""
    if str(path) == "-":
        return sys.stdin
    raw = open(path, "rb")
    head = raw.read(2)
    raw.seek(0)
    if head == GZIP_MAGIC:
        return io.TextIOWrapper(gzip.GzipFile(fileobj=raw), encoding="utf-8")
    return io.TextIOWrapper(raw, encoding="utf-8")


def _coerce_rating(value) -> int | None:
    try:
        r = float(value)
    except (TypeError, ValueError):
        return None
    if not r.is_integer():
        return None
    r = int(r)
    return r if 1 <= r <= 5 else None


def _coerce_timestamp(value, lo: int, hi: int) -> int | None:
    try:
        ts = float(value)
    except (TypeError, ValueError):
        return None
    if not ts.is_integer():
        return None
    ts = int(ts)
    return ts if lo <= ts < hi else None


def stream_ratings(
    source: str | Path | IO[str],
    fmt: str = "jsonl",
    fields: RatingFields | None = None,
    tally: ParseTally | None = None,
    epoch_min: int = DATASET_EPOCH_MIN,
    epoch_max: int = DATASET_EPOCH_MAX,
) -> Iterator[RatingRecord]:
    """Yield rating records in file order, tallying malformed lines.

    ``tally`` is owned by the caller so counts survive generator exhaustion.
    """
    if fmt not in FORMATS:
        raise UnknownFormatError(f"unknown rating format tag: {fmt!r}")
    fields = fields or RatingFields()
    tally = tally if tally is not None else ParseTally()

    own = isinstance(source, (str, Path))
    fh = open_text(source) if own else source
    try:
        if fmt == "jsonl":
            rows: Iterable[dict] = _iter_jsonl(fh, tally)
        else:
            rows = _iter_csv(fh, tally)
        for row in rows:
            tally.lines += 1
            user = row.get(fields.user)
            item = row.get(fields.item)
            if not user or not item:
                tally.reject("missing user or item")
                continue
            rating = _coerce_rating(row.get(fields.rating))
            if rating is None:
                tally.reject("bad rating")
                continue
            ts = _coerce_timestamp(row.get(fields.time), epoch_min, epoch_max)
            if ts is None:
                tally.reject("bad timestamp")
                continue
            yield RatingRecord(str(user), str(item), rating, ts)
    finally:
        if own:
            fh.close()


def clean_categories(raw) -> tuple[str, ...]:
    """Trim, drop empties, deduplicate; case is preserved."""
    if raw is None:
        return ()
    if isinstance(raw, str):
        raw = raw.split("|")
    seen = {}
    for label in raw:
        if not isinstance(label, str):
            continue
        label = label.strip()
        if label:
            seen[label] = None
    return tuple(sorted(seen))


def stream_item_categories(
    source: str | Path | IO[str],
    fmt: str = "jsonl",
    fields: MetaFields | None = None,
    tally: ParseTally | None = None,
) -> Iterator[ItemCategories]:
    """Yield per-item category sets; items with no usable label are tallied."""
    if fmt not in FORMATS:
        raise UnknownFormatError(f"unknown metadata format tag: {fmt!r}")
    fields = fields or MetaFields()
    tally = tally if tally is not None else ParseTally()

    own = isinstance(source, (str, Path))
    fh = open_text(source) if own else source
    try:
        rows = _iter_jsonl(fh, tally) if fmt == "jsonl" else _iter_csv(fh, tally)
        for row in rows:
            tally.lines += 1
            item = row.get(fields.item)
            if not item:
                tally.reject("missing item")
                continue
            cats = clean_categories(row.get(fields.categories))
            if not cats:
                tally.reject("no categories after cleaning")
                continue
            yield ItemCategories(str(item), cats)
    finally:
        if own:
            fh.close()


def _iter_jsonl(fh: IO[str], tally: ParseTally) -> Iterator[dict]:
    for line in fh:
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError:
            tally.lines += 1
            tally.reject("invalid json")
            continue
        if not isinstance(obj, dict):
            tally.lines += 1
            tally.reject("not an object")
            continue
        yield obj


def _iter_csv(fh: IO[str], tally: ParseTally) -> Iterator[dict]:
    reader = csv.DictReader(fh)
    for row in reader:
        if row.get(None) is not None:
            tally.lines += 1
            tally.reject("extra csv fields")
            continue
        yield row
