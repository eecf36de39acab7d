"""Category-relevance scores from category co-occurrence.

A target category is relevant to an item to the extent the target co-occurs
with the item's own tags across the corpus. Writing ``N[i, k]`` for the
number of items tagged with both ``i`` and ``k`` (diagonal = tag frequency),
an item with tag set ``T`` scores

    m(target) = min(1, sum_{k in T} N[target, k] / sum_{k in T} N[k, k])

which is 1 when the target always co-occurs with the item's tags, 0 when it
never does, and clipped to 1 when the target outweighs the tags themselves.
Scores are stored sparsely: only (item, target) pairs with m > 0.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np
import scipy.sparse as sp

from . import tableio
from .records import ItemCategories

_CHUNK_PAIRS = 2_000_000


class CooccurrenceCounts:
    """Sparse symmetric co-occurrence counts over a fixed category vocabulary."""

    def __init__(self, categories: Sequence[str], matrix: sp.csr_matrix):
        self.categories = tuple(categories)
        self.index = {c: i for i, c in enumerate(self.categories)}
        self.matrix = matrix

    @classmethod
    def from_items(cls, items: Iterable[ItemCategories]) -> "CooccurrenceCounts":
        return count_cooccurrence(items)

    def count(self, a: str, b: str) -> int:
        return int(self.matrix[self.index[a], self.index[b]])

    def frequency(self, category: str) -> int:
        return self.count(category, category)

    def __contains__(self, category: str) -> bool:
        return category in self.index


def count_cooccurrence(items: Iterable[ItemCategories]) -> CooccurrenceCounts:
    """Count, for every category pair, the items tagged with both.

    The diagonal holds plain tag frequencies. Vocabulary order is sorted so
    the result is independent of item iteration order.
    """
    tagsets = [item.categories for item in items]
    vocab = sorted({c for tags in tagsets for c in tags})
    index = {c: i for i, c in enumerate(vocab)}
    k = len(vocab)

    mat = sp.csr_matrix((k, k), dtype=np.int64)
    rows: list[int] = []
    cols: list[int] = []
    for tags in tagsets:
        codes = [index[c] for c in tags]
        for a in codes:
            for b in codes:
                rows.append(a)
                cols.append(b)
        if len(rows) >= _CHUNK_PAIRS:
            mat = mat + _coo_chunk(rows, cols, k)
            rows, cols = [], []
    if rows:
        mat = mat + _coo_chunk(rows, cols, k)
    return CooccurrenceCounts(vocab, mat.tocsr())


def _coo_chunk(rows: list[int], cols: list[int], k: int) -> sp.csr_matrix:
    data = np.ones(len(rows), dtype=np.int64)
    return sp.coo_matrix((data, (rows, cols)), shape=(k, k)).tocsr()


def relevance_for_item(
    tags: Iterable[str], target: str, counts: CooccurrenceCounts
) -> float:
    """Relevance of ``target`` for an item with tag set ``tags``, in [0, 1]."""
    codes = [counts.index[t] for t in tags]
    if not codes:
        raise ValueError("item has an empty tag set; should have been dropped upstream")
    t = counts.index[target]
    numer = sum(int(counts.matrix[t, k]) for k in codes)
    if numer == 0:
        return 0.0
    denom = sum(int(counts.matrix[k, k]) for k in codes)
    return min(1.0, numer / denom)


@dataclass
class RelevanceMatrix:
    """Sparse (item, category) -> m map with m > 0 everywhere."""

    rows: dict[str, tuple[tuple[str, float], ...]]

    def get(self, item_id: str) -> tuple[tuple[str, float], ...]:
        return self.rows.get(item_id, ())

    def __len__(self) -> int:
        return len(self.rows)

    def entries(self) -> Iterator[tuple[str, str, float]]:
        for item_id in sorted(self.rows):
            for category, m in self.rows[item_id]:
                yield item_id, category, m

    def write_csv(self, path: str | Path) -> int:
        return tableio.write_csv(path, ("item_id", "category", "relevance"), self.entries())

    def write_binary(self, path: str | Path) -> int:
        cols = (("item_id", "s"), ("category", "s"), ("relevance", "f"))
        return tableio.write_binary_table(path, cols, self.entries())

    @classmethod
    def read_csv(cls, path: str | Path) -> "RelevanceMatrix":
        rows: dict[str, list[tuple[str, float]]] = {}
        for rec in tableio.read_csv_rows(path):
            rows.setdefault(rec["item_id"], []).append(
                (rec["category"], float(rec["relevance"]))
            )
        return cls({item: tuple(pairs) for item, pairs in rows.items()})


def build_matrix(
    items: Iterable[ItemCategories], counts: CooccurrenceCounts
) -> RelevanceMatrix:
    """Score every item against every category with nonzero co-occurrence mass.

    Items sharing a tag set share one computation; scores are cached per
    distinct tag set.
    """
    csr = counts.matrix
    diag = csr.diagonal()
    cache: dict[tuple[str, ...], tuple[tuple[str, float], ...]] = {}
    rows: dict[str, tuple[tuple[str, float], ...]] = {}
    for item in items:
        tags = item.categories
        scored = cache.get(tags)
        if scored is None:
            codes = np.array([counts.index[t] for t in tags], dtype=np.intp)
            numer = np.asarray(csr[:, codes].sum(axis=1)).ravel()
            denom = float(diag[codes].sum())
            m = np.minimum(numer / denom, 1.0)
            nz = np.nonzero(m)[0]
            scored = tuple((counts.categories[i], float(m[i])) for i in nz)
            cache[tags] = scored
        rows[item.item_id] = scored
    return RelevanceMatrix(rows)
