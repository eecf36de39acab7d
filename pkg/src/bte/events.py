"""Preference-change episode detection and Barrier-to-Exit values.

A single forward scan per (user, category) series, checked against the
user's averaged threshold band:

  * a point with ``c > X`` (re)opens eligibility and becomes the candidate
    departure point ``t_x``, clearing the accumulator;
  * a point with ``Y < c < X`` accumulates while eligibility is open;
  * a point with ``c < Y`` closes the episode at ``t_y``; the event value is
    the accumulated sum and must be strictly positive, so a direct
    above-to-below jump yields no event;
  * ties (``c == X`` or ``c == Y``) and points without a threshold at their
    quarter neither open, accumulate, nor close.

Multiple events per (user, category) are allowed; closing resets the scan.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import pandas as pd

from . import tableio
from .preference import PreferenceSeries, ThresholdSeries
from .quarters import ORIGIN, Quarter

ANCHORS = ("midpoint", "close")


@dataclass(frozen=True)
class BteEvent:
    """One measured preference-change episode."""

    user_id: str
    category: str
    t_x: Quarter
    t_y: Quarter
    value: float
    activity: int
    time_years: float


def event_time_years(t_x: Quarter, t_y: Quarter, anchor: str = "midpoint") -> float:
    """Regression time of an event, in years since the origin quarter."""
    if anchor == "midpoint":
        return (t_x.index + t_y.index) / 2.0 / 4.0
    if anchor == "close":
        return t_y.index / 4.0
    raise ValueError(f"unknown event time anchor: {anchor!r}")


def extract_events(
    pref: PreferenceSeries,
    thresholds: ThresholdSeries,
    activity: Mapping[int, int],
    anchor: str = "midpoint",
) -> list[BteEvent]:
    """Scan one series against the user's threshold band.

    ``activity`` maps quarter index to the user's rating count in that
    quarter (all categories); an event's activity is the total over
    ``(t_x, t_y]``.
    """
    if pref.user_id != thresholds.user_id:
        raise ValueError("preference and threshold series belong to different users")
    band = thresholds.as_mapping()

    events: list[BteEvent] = []
    open_q: int | None = None
    accum = 0.0
    for q, c in zip(pref.quarters, pref.values):
        xy = band.get(int(q))
        if xy is None:
            continue
        x, y = xy
        if c > x:
            open_q = int(q)
            accum = 0.0
        elif c < y:
            if open_q is not None and accum > 0.0:
                events.append(
                    _make_event(pref, open_q, int(q), accum, activity, anchor)
                )
            open_q = None
            accum = 0.0
        elif y < c < x and open_q is not None:
            accum += float(c)
    return events


def _make_event(
    pref: PreferenceSeries,
    open_q: int,
    close_q: int,
    value: float,
    activity: Mapping[int, int],
    anchor: str,
) -> BteEvent:
    t_x = Quarter.from_index(open_q)
    t_y = Quarter.from_index(close_q)
    acts = sum(activity.get(q, 0) for q in range(open_q + 1, close_q + 1))
    return BteEvent(
        user_id=pref.user_id,
        category=pref.category,
        t_x=t_x,
        t_y=t_y,
        value=value,
        activity=acts,
        time_years=event_time_years(t_x, t_y, anchor),
    )


def extract_all_events(
    series: Mapping[str, Mapping[str, PreferenceSeries]],
    thresholds: Mapping[str, ThresholdSeries],
    activity: Mapping[tuple[str, int], int],
    anchor: str = "midpoint",
) -> list[BteEvent]:
    """Run extraction for every (user, category), deterministically ordered."""
    by_user: dict[str, dict[int, int]] = {}
    for (user, q), n in activity.items():
        by_user.setdefault(user, {})[q] = n

    events: list[BteEvent] = []
    for user in sorted(series):
        thr = thresholds.get(user)
        if thr is None or len(thr.quarters) == 0:
            continue
        user_activity = by_user.get(user, {})
        for cat in sorted(series[user]):
            events.extend(extract_events(series[user][cat], thr, user_activity, anchor))
    return events


def event_table(events: Iterable[BteEvent]) -> pd.DataFrame:
    """Analysis table with natural-log response and activity covariate."""
    rows = [
        {
            "user_id": e.user_id,
            "category": e.category,
            "t_x": str(e.t_x),
            "t_y": str(e.t_y),
            "value": e.value,
            "activity": e.activity,
            "time_years": e.time_years,
            "log_value": math.log(e.value),
            "log_activity": math.log(e.activity),
        }
        for e in events
    ]
    columns = [
        "user_id",
        "category",
        "t_x",
        "t_y",
        "value",
        "activity",
        "time_years",
        "log_value",
        "log_activity",
    ]
    return pd.DataFrame(rows, columns=columns)


def write_events_csv(path: str | Path, events: Sequence[BteEvent]) -> int:
    def rows():
        for e in events:
            yield (
                e.user_id,
                e.category,
                str(e.t_x),
                str(e.t_y),
                repr(e.value),
                e.activity,
                repr(e.time_years),
            )

    header = ("user_id", "category", "t_x", "t_y", "value", "activity", "time_years")
    return tableio.write_csv(path, header, rows())


def read_events_csv(path: str | Path) -> list[BteEvent]:
    out = []
    for rec in tableio.read_csv_rows(path):
        out.append(
            BteEvent(
                user_id=rec["user_id"],
                category=rec["category"],
                t_x=Quarter.parse(rec["t_x"]),
                t_y=Quarter.parse(rec["t_y"]),
                value=float(rec["value"]),
                activity=int(rec["activity"]),
                time_years=float(rec["time_years"]),
            )
        )
    return out
