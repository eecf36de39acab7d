"""Population filters and quarter-level aggregation over rating streams.

The driver makes two streaming passes over the rating file: pass one counts
ratings per user, pass two spills the retained users' records into user-hash
partitions on disk. Partitions are then deduplicated and aggregated
independently (thread-parallel) and merged, so peak memory is bounded by the
partition budget plus the output table, never by the rating count.
"""

from __future__ import annotations

import json
import struct
import tempfile
import zlib
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Iterator, Sequence

from . import tableio
from .quarters import Quarter
from .records import (
    ItemCategories,
    ParseTally,
    RatingFields,
    RatingRecord,
    stream_ratings,
)
from .relevance import RelevanceMatrix

DEFAULT_MIN_USER_RATINGS = 20
DEFAULT_MIN_CATEGORY_BOOKS = 100

#: Records held in memory per partition during dedup/aggregation.
PARTITION_BUDGET = 250_000


@dataclass
class FilterManifest:
    """Counts for every stage of an ingest run; conservation must hold exactly:

    ``lines_parsed = malformed + filtered_user + duplicates + unmatched + aggregated``
    """

    min_user_ratings: int = DEFAULT_MIN_USER_RATINGS
    min_category_books: int = DEFAULT_MIN_CATEGORY_BOOKS
    lines_parsed: int = 0
    malformed: int = 0
    malformed_reasons: dict = field(default_factory=dict)
    users_seen: int = 0
    users_retained: int = 0
    ratings_seen: int = 0
    ratings_retained: int = 0
    filtered_user: int = 0
    duplicates: int = 0
    unmatched: int = 0
    aggregated: int = 0
    items_dropped_empty: int = 0
    categories_seen: int = 0
    categories_retained: int = 0

    def conserves(self) -> bool:
        sinks = (
            self.malformed
            + self.filtered_user
            + self.duplicates
            + self.unmatched
            + self.aggregated
        )
        return self.lines_parsed == sinks

    def to_json(self) -> str:
        return json.dumps(self.__dict__, indent=2, sort_keys=True)


def filter_users(
    source: Iterable[RatingRecord] | Callable[[], Iterator[RatingRecord]],
    min_count: int,
) -> tuple[Iterator[RatingRecord], FilterManifest]:
    """Keep only records of users with strictly more than ``min_count`` ratings.

    ``source`` must be re-iterable (a list, or a factory returning a fresh
    iterator) because counting is a separate first pass.
    """
    if min_count < 1:
        raise ValueError("min_count must be >= 1")
    counts = Counter(r.user_id for r in _reiter(source))
    keep = {u for u, c in counts.items() if c > min_count}

    manifest = FilterManifest(min_user_ratings=min_count)
    manifest.users_seen = len(counts)
    manifest.users_retained = len(keep)
    manifest.ratings_seen = sum(counts.values())
    manifest.ratings_retained = sum(counts[u] for u in keep)
    manifest.filtered_user = manifest.ratings_seen - manifest.ratings_retained

    def emit() -> Iterator[RatingRecord]:
        for rec in _reiter(source):
            if rec.user_id in keep:
                yield rec

    return emit(), manifest


def _reiter(source) -> Iterator:
    return iter(source() if callable(source) else source)


@dataclass
class CategoryFilterStats:
    min_books: int
    categories_seen: int = 0
    categories_retained: int = 0
    items_dropped_empty: int = 0


def filter_categories(
    source: Iterable[ItemCategories] | Callable[[], Iterator[ItemCategories]],
    min_books: int,
) -> tuple[Iterator[ItemCategories], CategoryFilterStats]:
    """Remove category labels used on ``<= min_books`` items; drop emptied items."""
    if min_books < 1:
        raise ValueError("min_books must be >= 1")
    freq: Counter = Counter()
    for item in _reiter(source):
        freq.update(set(item.categories))
    keep = {c for c, n in freq.items() if n > min_books}
    stats = CategoryFilterStats(
        min_books=min_books,
        categories_seen=len(freq),
        categories_retained=len(keep),
    )

    def emit() -> Iterator[ItemCategories]:
        for item in _reiter(source):
            surviving = tuple(c for c in item.categories if c in keep)
            if surviving:
                yield ItemCategories(item.item_id, surviving)
            else:
                stats.items_dropped_empty += 1

    return emit(), stats


class PreferenceTable:
    """Quarter-aggregated preference sums plus rating-level activity counts.

    Both maps are mergeable monoids, so shard outputs combine associatively.
    """

    def __init__(self) -> None:
        # (user_id, category, quarter_index) -> [preference_sum, rating_count]
        self.cells: dict[tuple[str, str, int], list] = {}
        # (user_id, quarter_index) -> rating count across all categories
        self.activity: dict[tuple[str, int], int] = {}

    def add_record(self, rec: RatingRecord, rows: Sequence[tuple[str, float]]) -> None:
        q = Quarter.from_timestamp(rec.timestamp).index
        for category, m in rows:
            cell = self.cells.get((rec.user_id, category, q))
            if cell is None:
                self.cells[(rec.user_id, category, q)] = [m * rec.rating, 1]
            else:
                cell[0] += m * rec.rating
                cell[1] += 1
        key = (rec.user_id, q)
        self.activity[key] = self.activity.get(key, 0) + 1

    def merge(self, other: "PreferenceTable") -> None:
        for key, (s, c) in other.cells.items():
            cell = self.cells.get(key)
            if cell is None:
                self.cells[key] = [s, c]
            else:
                cell[0] += s
                cell[1] += c
        for key, c in other.activity.items():
            self.activity[key] = self.activity.get(key, 0) + c

    def preference_rows(self) -> Iterator[tuple[str, str, int, int, float, int]]:
        for (user, cat, q) in sorted(self.cells):
            s, c = self.cells[(user, cat, q)]
            quarter = Quarter.from_index(q)
            yield user, cat, quarter.year, quarter.quarter, s, c

    def activity_rows(self) -> Iterator[tuple[str, int, int, int]]:
        for (user, q) in sorted(self.activity):
            quarter = Quarter.from_index(q)
            yield user, quarter.year, quarter.quarter, self.activity[(user, q)]

    def write(self, out_dir: str | Path) -> dict[str, Path]:
        out = Path(out_dir)
        pref_csv = out / "preference.csv"
        pref_bin = out / "preference.bin"
        act_csv = out / "activity.csv"
        header = ("user_id", "category", "year", "quarter", "preference_sum", "rating_count")
        tableio.write_csv(pref_csv, header, self.preference_rows())
        cols = (
            ("user_id", "s"),
            ("category", "s"),
            ("year", "i"),
            ("quarter", "i"),
            ("preference_sum", "f"),
            ("rating_count", "i"),
        )
        tableio.write_binary_table(pref_bin, cols, self.preference_rows())
        tableio.write_csv(act_csv, ("user_id", "year", "quarter", "rating_count"), self.activity_rows())
        return {"preference_csv": pref_csv, "preference_bin": pref_bin, "activity_csv": act_csv}


@dataclass
class AggregateResult:
    table: PreferenceTable
    unmatched: int = 0
    aggregated: int = 0
    duplicates: int = 0


def aggregate_quarters(
    joined: Iterable[tuple[RatingRecord, Sequence[tuple[str, float]] | None]],
) -> AggregateResult:
    """Aggregate already-joined, already-deduplicated records.

    A record whose relevance row is missing or empty is tallied as unmatched
    and excluded (it contributes to neither preferences nor activity).
    """
    result = AggregateResult(PreferenceTable())
    for rec, rows in joined:
        if not rows:
            result.unmatched += 1
            continue
        result.table.add_record(rec, rows)
        result.aggregated += 1
    return result


def dedupe_latest(records: Sequence[RatingRecord]) -> tuple[list[RatingRecord], int]:
    """Keep the latest rating per (user, item); input order breaks timestamp ties."""
    winners: dict[tuple[str, str], RatingRecord] = {}
    for rec in records:
        key = (rec.user_id, rec.item_id)
        prev = winners.get(key)
        if prev is None or rec.timestamp >= prev.timestamp:
            winners[key] = rec
    kept = [r for r in records if winners[(r.user_id, r.item_id)] is r]
    return kept, len(records) - len(kept)


# ---------------------------------------------------------------------------
# File-level driver


_REC_HEAD = struct.Struct("<HHBi")


def _pack_record(rec: RatingRecord) -> bytes:
    u = rec.user_id.encode("utf-8")
    i = rec.item_id.encode("utf-8")
    return _REC_HEAD.pack(len(u), len(i), rec.rating, rec.timestamp) + u + i


def _unpack_records(blob: bytes) -> list[RatingRecord]:
    out = []
    off = 0
    size = _REC_HEAD.size
    while off < len(blob):
        ulen, ilen, rating, ts = _REC_HEAD.unpack_from(blob, off)
        off += size
        user = blob[off : off + ulen].decode("utf-8")
        off += ulen
        item = blob[off : off + ilen].decode("utf-8")
        off += ilen
        out.append(RatingRecord(user, item, rating, ts))
    return out


def _partition_of(user_id: str, nparts: int) -> int:
    return zlib.crc32(user_id.encode("utf-8")) % nparts


def run_ingest(
    ratings_path: str | Path,
    relevance: RelevanceMatrix,
    out_dir: str | Path,
    fmt: str = "jsonl",
    fields: RatingFields | None = None,
    min_user_ratings: int = DEFAULT_MIN_USER_RATINGS,
    threads: int = 1,
    partition_budget: int = PARTITION_BUDGET,
) -> tuple[PreferenceTable, FilterManifest, dict[str, Path]]:
    """Full ingest: filter users, dedupe, join with relevance, aggregate, write."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    # Pass 1: per-user rating counts.
    tally1 = ParseTally()
    counts: Counter = Counter()
    for rec in stream_ratings(ratings_path, fmt, fields, tally1):
        counts[rec.user_id] += 1
    keep = {u for u, c in counts.items() if c > min_user_ratings}

    manifest = FilterManifest(min_user_ratings=min_user_ratings)
    manifest.users_seen = len(counts)
    manifest.users_retained = len(keep)
    manifest.ratings_seen = sum(counts.values())
    manifest.ratings_retained = sum(counts[u] for u in keep)
    manifest.filtered_user = manifest.ratings_seen - manifest.ratings_retained

    retained = manifest.ratings_retained
    nparts = max(1, -(-retained // partition_budget))  # ceil

    table = PreferenceTable()
    with tempfile.TemporaryDirectory(prefix="bte-ingest-") as tmp:
        spool = [open(Path(tmp) / f"part{i:04d}.bin", "wb") for i in range(nparts)]
        try:
            tally2 = ParseTally()
            for rec in stream_ratings(ratings_path, fmt, fields, tally2):
                if rec.user_id in keep:
                    spool[_partition_of(rec.user_id, nparts)].write(_pack_record(rec))
        finally:
            for fh in spool:
                fh.close()
        manifest.lines_parsed = tally2.lines
        manifest.malformed = tally2.malformed
        manifest.malformed_reasons = dict(sorted(tally2.reasons.items()))

        def process(part_index: int) -> AggregateResult:
            blob = (Path(tmp) / f"part{part_index:04d}.bin").read_bytes()
            records = _unpack_records(blob)
            kept, dropped = dedupe_latest(records)
            result = aggregate_quarters((r, relevance.get(r.item_id)) for r in kept)
            result.duplicates = dropped
            return result

        if threads > 1 and nparts > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                results = list(pool.map(process, range(nparts)))
        else:
            results = [process(i) for i in range(nparts)]

    for res in results:
        table.merge(res.table)
        manifest.unmatched += res.unmatched
        manifest.aggregated += res.aggregated
        manifest.duplicates += res.duplicates

    paths = table.write(out)
    manifest_path = out / "ingest_manifest.json"
    manifest_path.write_text(manifest.to_json())
    paths["manifest"] = manifest_path
    return table, manifest, paths
