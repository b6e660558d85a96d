"""Annual count series for one district, with an exclusion mask."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateSeries

#: Minimum usable observations: intercept, optional shifted intercept,
#: trend, plus one residual degree of freedom.
MIN_USABLE = 4


@dataclass(frozen=True)
class CountSeries:
    """Annual nonnegative integer counts at strictly increasing years.

    ``excluded[i]`` marks observations omitted from every likelihood sum
    (war years, failed interpolations).  Excluded values are carried but
    never read by any fitting routine.
    """

    district_id: str
    years: np.ndarray
    counts: np.ndarray
    excluded: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        years = np.asarray(self.years, dtype=np.int64)
        counts_raw = np.asarray(self.counts)
        if self.excluded is None:
            excluded = np.zeros(years.shape, dtype=bool)
        else:
            excluded = np.asarray(self.excluded, dtype=bool)
        if years.ndim != 1 or counts_raw.shape != years.shape or excluded.shape != years.shape:
            raise ValueError("years, counts and excluded must be 1-d and equally long")
        if np.any(np.diff(years) <= 0):
            raise ValueError(f"{self.district_id}: years must be strictly increasing")
        if not np.all(np.isfinite(counts_raw.astype(float))):
            raise ValueError(f"{self.district_id}: counts must be finite")
        counts = np.asarray(np.rint(counts_raw), dtype=np.int64)
        if np.any(np.abs(counts_raw - counts) > 1e-9):
            raise ValueError(f"{self.district_id}: counts must be integral")
        if np.any(counts < 0):
            raise ValueError(f"{self.district_id}: counts must be nonnegative")
        n_used = int(np.count_nonzero(~excluded))
        if n_used < MIN_USABLE:
            raise DegenerateSeries(
                f"{self.district_id}: {n_used} usable observations, need at least {MIN_USABLE}"
            )
        object.__setattr__(self, "years", years)
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "excluded", excluded)

    def __len__(self) -> int:
        return self.years.size

    @property
    def used(self) -> np.ndarray:
        """Boolean mask of observations that enter likelihood sums."""
        return ~self.excluded

    @property
    def used_years(self) -> np.ndarray:
        return self.years[self.used]

    @property
    def used_counts(self) -> np.ndarray:
        return self.counts[self.used]

    def with_exclusions(self, years_to_exclude) -> "CountSeries":
        """Return a copy with the given calendar years additionally excluded."""
        extra = np.isin(self.years, np.asarray(list(years_to_exclude), dtype=np.int64))
        return CountSeries(self.district_id, self.years, self.counts, self.excluded | extra)
