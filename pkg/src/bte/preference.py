"""Per-user revealed-preference series and rolling interaction thresholds.

For each user and category the quarterly preference values form a series
``c_t``. Over a right-closed rolling window ``(t - v, t]`` the per-category
band is ``mean +/- sigma_mult * std`` (sample std, divisor n-1), defined only
where the window holds at least ``min_window_points`` observations. The
exported per-user thresholds are the unweighted mean of the per-category
upper (resp. lower) bounds over all categories defined at ``t``.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Mapping

import numpy as np

from . import tableio
from .quarters import Quarter


@dataclass(frozen=True)
class WindowConfig:
    window_quarters: int = 8
    min_window_points: int = 2
    sigma_mult: float = 2.0

    def __post_init__(self) -> None:
        if self.window_quarters < 1:
            raise ValueError("window_quarters must be >= 1")
        if self.min_window_points < 1:
            raise ValueError("min_window_points must be >= 1")
        if self.sigma_mult <= 0:
            raise ValueError("sigma_mult must be > 0")


@dataclass
class PreferenceSeries:
    """One (user, category) series on the quarterly grid, strictly increasing."""

    user_id: str
    category: str
    quarters: np.ndarray  # int quarter indices, strictly increasing
    values: np.ndarray  # preference sums, >= 0
    counts: np.ndarray  # per-quarter rating counts, >= 1

    def __len__(self) -> int:
        return len(self.quarters)


@dataclass
class ThresholdSeries:
    """Category-averaged upper/lower interaction thresholds for one user."""

    user_id: str
    quarters: np.ndarray
    upper: np.ndarray
    lower: np.ndarray

    def as_mapping(self) -> dict[int, tuple[float, float]]:
        return {
            int(q): (float(x), float(y))
            for q, x, y in zip(self.quarters, self.upper, self.lower)
        }


def build_series(
    rows: Iterable[tuple[str, str, int, int, float, int]],
) -> dict[str, dict[str, PreferenceSeries]]:
    """Group aggregated (user, category, year, quarter, sum, count) rows.

    Returns ``{user_id: {category: series}}`` with points sorted by quarter;
    the result is independent of input row order.
    """
    acc: dict[str, dict[str, list[tuple[int, float, int]]]] = {}
    for user, cat, year, quarter, psum, count in rows:
        q = Quarter(int(year), int(quarter)).index
        acc.setdefault(user, {}).setdefault(cat, []).append((q, float(psum), int(count)))

    out: dict[str, dict[str, PreferenceSeries]] = {}
    for user, cats in acc.items():
        out[user] = {}
        for cat, points in cats.items():
            points.sort()
            quarters = np.array([p[0] for p in points], dtype=np.int64)
            if len(np.unique(quarters)) != len(quarters):
                raise ValueError(f"duplicate quarter rows for ({user!r}, {cat!r})")
            out[user][cat] = PreferenceSeries(
                user_id=user,
                category=cat,
                quarters=quarters,
                values=np.array([p[1] for p in points]),
                counts=np.array([p[2] for p in points], dtype=np.int64),
            )
    return out


def preference_rows_from_csv(path: str | Path) -> Iterator[tuple[str, str, int, int, float, int]]:
    for rec in tableio.read_csv_rows(path):
        yield (
            rec["user_id"],
            rec["category"],
            int(rec["year"]),
            int(rec["quarter"]),
            float(rec["preference_sum"]),
            int(rec["rating_count"]),
        )


def rolling_thresholds(
    series_by_category: Mapping[str, PreferenceSeries],
    cfg: WindowConfig,
) -> ThresholdSeries:
    """Compute one user's averaged threshold band on the quarterly grid.

    The grid runs from the user's first to last observed quarter; a grid
    quarter with no defined category window is absent from the output.
    """
    if not series_by_category:
        raise ValueError("user has no preference series")
    user_id = next(iter(series_by_category.values())).user_id

    lo = min(int(s.quarters[0]) for s in series_by_category.values())
    hi = max(int(s.quarters[-1]) for s in series_by_category.values())
    grid = np.arange(lo, hi + 1, dtype=np.int64)

    sums_x = np.zeros(len(grid))
    sums_y = np.zeros(len(grid))
    defined = np.zeros(len(grid), dtype=np.int64)

    for cat in sorted(series_by_category):
        s = series_by_category[cat]
        # windows (t - v, t]: points with quarter index in [t - v + 1, t]
        starts = np.searchsorted(s.quarters, grid - cfg.window_quarters + 1, side="left")
        stops = np.searchsorted(s.quarters, grid, side="right")
        for gi in range(len(grid)):
            n = stops[gi] - starts[gi]
            if n < cfg.min_window_points:
                continue
            window = s.values[starts[gi] : stops[gi]]
            mean = float(np.mean(window))
            spread = cfg.sigma_mult * float(np.std(window, ddof=1))
            sums_x[gi] += mean + spread
            sums_y[gi] += mean - spread
            defined[gi] += 1

    mask = defined > 0
    return ThresholdSeries(
        user_id=user_id,
        quarters=grid[mask],
        upper=sums_x[mask] / defined[mask],
        lower=sums_y[mask] / defined[mask],
    )


def write_thresholds_csv(
    path: str | Path, all_series: Iterable[ThresholdSeries]
) -> int:
    def rows():
        for ts in sorted(all_series, key=lambda t: t.user_id):
            for q, x, y in zip(ts.quarters, ts.upper, ts.lower):
                quarter = Quarter.from_index(int(q))
                yield ts.user_id, quarter.year, quarter.quarter, float(x), float(y)

    return tableio.write_csv(path, ("user_id", "year", "quarter", "upper", "lower"), rows())


def read_thresholds_csv(path: str | Path) -> dict[str, ThresholdSeries]:
    acc: dict[str, list[tuple[int, float, float]]] = {}
    for rec in tableio.read_csv_rows(path):
        q = Quarter(int(rec["year"]), int(rec["quarter"])).index
        acc.setdefault(rec["user_id"], []).append((q, float(rec["upper"]), float(rec["lower"])))
    out = {}
    for user, points in acc.items():
        points.sort()
        out[user] = ThresholdSeries(
            user_id=user,
            quarters=np.array([p[0] for p in points], dtype=np.int64),
            upper=np.array([p[1] for p in points]),
            lower=np.array([p[2] for p in points]),
        )
    return out
