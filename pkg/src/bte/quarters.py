"""Calendar-quarter time axis used throughout the pipeline.

All timestamps are interpreted in UTC and mapped onto calendar quarters.
Quarter arithmetic is exact integer arithmetic on an index counted from the
origin quarter 1998-Q1; fractional years are ``index / 4``.
"""

from __future__ import annotations

from dataclasses import dataclass
from datetime import datetime, timezone

# Inclusive lower / exclusive upper bound on accepted rating timestamps.
DATASET_EPOCH_MIN = int(datetime(1996, 1, 1, tzinfo=timezone.utc).timestamp())
DATASET_EPOCH_MAX = int(datetime(2019, 1, 1, tzinfo=timezone.utc).timestamp())


@dataclass(frozen=True, order=True)
class Quarter:
    """A calendar quarter, totally ordered by (year, quarter)."""

    year: int
    quarter: int

    def __post_init__(self) -> None:
        if not 1 <= self.quarter <= 4:
            raise ValueError(f"quarter must be in 1..4, got {self.quarter}")

    @classmethod
    def from_timestamp(cls, ts: int | float) -> "Quarter":
        dt = datetime.fromtimestamp(ts, tz=timezone.utc)
        return cls(dt.year, (dt.month - 1) // 3 + 1)

    @classmethod
    def from_index(cls, index: int) -> "Quarter":
        year, q = divmod(index, 4)
        return cls(ORIGIN.year + year, q + 1)

    @classmethod
    def parse(cls, text: str) -> "Quarter":
        try:
            year_s, q_s = text.upper().split("Q")
            return cls(int(year_s), int(q_s))
        except (ValueError, AttributeError) as exc:
            raise ValueError(f"not a quarter literal: {text!r}") from exc

    @property
    def index(self) -> int:
        """Quarters elapsed since the origin quarter (may be negative)."""
        return (self.year - ORIGIN.year) * 4 + (self.quarter - 1)

    @property
    def years_since_origin(self) -> float:
        return self.index / 4.0

    def __sub__(self, other: "Quarter") -> int:
        return self.index - other.index

    def __str__(self) -> str:
        return f"{self.year}Q{self.quarter}"


#: Time origin for the regression axis.
ORIGIN = Quarter(1998, 1)
