"""Similarity time series on a bucket grid and stability-interval statistics."""

from __future__ import annotations

import logging
import math
from collections import Counter
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from typing import TextIO

import numpy as np
from joblib import Parallel, delayed

from recount._errors import InconsistencyError, InputError, UndefinedInputError
from recount._output import write_rows
from recount.similarity import (
    DEFAULT_MIN_OVERLAP,
    SimilarityAccumulators,
    pearson_fast,
    vectors_from_ratings,
)
from recount.store import GraphStore, UserPair

logger = logging.getLogger(__name__)

DEFAULT_BUCKET_LEN = 1_000_000
DEFAULT_SENSITIVITY = 0.01
DEFAULT_WINDOW = 3
DEFAULT_MIN_SPAN = 5


@dataclass(frozen=True)
class TimeGrid:
    """Bucket i covers [start + i*bucket_len, start + (i+1)*bucket_len)."""

    start: int
    bucket_len: int = DEFAULT_BUCKET_LEN
    bucket_count: int = 1

    def __post_init__(self) -> None:
        if self.bucket_len <= 0:
            raise InputError(f"bucket_len must be positive, got {self.bucket_len}")
        if self.bucket_count < 0:
            raise InputError(f"bucket_count must be non-negative, got {self.bucket_count}")

    @classmethod
    def covering(cls, store: GraphStore, bucket_len: int = DEFAULT_BUCKET_LEN) -> TimeGrid:
        """Smallest grid holding every rating in the store."""
        span = store.time_range()
        if span is None:
            return cls(start=0, bucket_len=bucket_len, bucket_count=0)
        first, last = span
        count = (last - first) // bucket_len + 1
        return cls(start=first, bucket_len=bucket_len, bucket_count=count)

    def bucket_of(self, timestamp: int) -> int:
        return (timestamp - self.start) // self.bucket_len

    def bucket_end(self, index: int) -> int:
        """Last second inside bucket `index`."""
        return self.start + (index + 1) * self.bucket_len - 1


@dataclass(frozen=True)
class SimilaritySeries:
    pair: UserPair
    values: tuple[float | None, ...]
    active_range: tuple[int, int] | None

    def present(self) -> int:
        return sum(value is not None for value in self.values)


def joint_range(store: GraphStore, pair: UserPair, grid: TimeGrid) -> tuple[int, int] | None:
    """Buckets in which both users have started and neither has ceased."""
    a_first, a_last = store.activity_span(pair.a)
    b_first, b_last = store.activity_span(pair.b)
    first = max(grid.bucket_of(a_first), grid.bucket_of(b_first), 0)
    last = min(grid.bucket_of(a_last), grid.bucket_of(b_last), grid.bucket_count - 1)
    if first > last:
        return None
    return first, last


def build_series(
    store: GraphStore,
    pair: UserPair,
    grid: TimeGrid,
    min_overlap: int = DEFAULT_MIN_OVERLAP,
) -> SimilaritySeries:
    """Cumulative-prefix similarity at the end of every bucket.

    The coefficient is only recomputed in buckets where one of the two users
    acted; otherwise the prefix is unchanged and the value carries over.
    """
    values: list[float | None] = [None] * grid.bucket_count
    active = joint_range(store, pair, grid)
    if active is None:
        return SimilaritySeries(pair, tuple(values), None)

    first, last = active
    streams = (store.user_entries(pair.a), store.user_entries(pair.b))
    latest: tuple[dict[int, float], dict[int, float]] = ({}, {})
    cursors = [0, 0]
    current: float | None = None
    for index in range(last + 1):
        end = grid.bucket_end(index)
        changed = False
        for side in (0, 1):
            entries = streams[side]
            while cursors[side] < len(entries) and entries[cursors[side]].timestamp <= end:
                entry = entries[cursors[side]]
                latest[side][entry.item_id] = entry.rating
                cursors[side] += 1
                changed = True
        if changed:
            pv = vectors_from_ratings(latest[0], latest[1])
            current = pearson_fast(SimilarityAccumulators.from_vectors(pv), min_overlap)
        if index >= first:
            values[index] = current
    return SimilaritySeries(pair, tuple(values), active)


def _build_chunk(
    store: GraphStore, pairs: Sequence[UserPair], grid: TimeGrid, min_overlap: int
) -> list[SimilaritySeries]:
    return [build_series(store, pair, grid, min_overlap) for pair in pairs]


def build_all_series(
    store: GraphStore,
    pairs: Sequence[UserPair],
    grid: TimeGrid,
    min_overlap: int = DEFAULT_MIN_OVERLAP,
    workers: int = 1,
) -> list[SimilaritySeries]:
    """Series for every pair, in input order; fans out over a snapshot."""
    if workers <= 1 or len(pairs) < 2 * workers:
        return _build_chunk(store, pairs, grid, min_overlap)
    snapshot = store.copy()
    size = math.ceil(len(pairs) / workers)
    chunks = [pairs[offset : offset + size] for offset in range(0, len(pairs), size)]
    logger.debug("building %d series on %d workers", len(pairs), workers)
    results = Parallel(n_jobs=workers)(
        delayed(_build_chunk)(snapshot, chunk, grid, min_overlap) for chunk in chunks
    )
    return [series for chunk in results for series in chunk]


def select_pairs(
    store: GraphStore,
    grid: TimeGrid,
    min_span: int = DEFAULT_MIN_SPAN,
    min_overlap: int = DEFAULT_MIN_OVERLAP,
    max_pairs: int = 0,
) -> list[UserPair]:
    """Pairs whose joint activity spans enough buckets to observe change.

    Pairs also need at least `min_overlap` items rated by both over the whole
    log. Selection walks pairs in canonical order; `max_pairs` (0 = all) caps it.
    """
    users = sorted(store.users)
    spans = {}
    for user in users:
        first, last = store.activity_span(user)
        spans[user] = (
            max(grid.bucket_of(first), 0),
            min(grid.bucket_of(last), grid.bucket_count - 1),
        )
    item_sets = {user: {entry.item_id for entry in store.user_entries(user)} for user in users}

    selected: list[UserPair] = []
    for i, a in enumerate(users):
        for b in users[i + 1 :]:
            first = max(spans[a][0], spans[b][0])
            last = min(spans[a][1], spans[b][1])
            if last - first + 1 < min_span:
                continue
            small, large = sorted((item_sets[a], item_sets[b]), key=len)
            if sum(item in large for item in small) < min_overlap:
                continue
            selected.append(UserPair(a, b))
            if max_pairs and len(selected) >= max_pairs:
                logger.info("pair selection capped at %d", max_pairs)
                return selected
    return selected


# -- stability intervals -------------------------------------------------


@dataclass
class RunScan:
    """Completed interval lengths plus runs cut short by absence or series end."""

    lengths: list[int] = field(default_factory=list)
    censored: int = 0

    @property
    def runs(self) -> int:
        return len(self.lengths) + self.censored

    def merge(self, other: RunScan) -> None:
        self.lengths.extend(other.lengths)
        self.censored += other.censored


def scan_runs(series: SimilaritySeries, d: float = DEFAULT_SENSITIVITY) -> RunScan:
    """Anchor-based scan: a run ends at the first value more than d from its anchor."""
    if d <= 0:
        raise InputError(f"Sensitivity d must be positive, got {d}")
    scan = RunScan()
    anchor_index: int | None = None
    anchor = 0.0
    for index, value in enumerate(series.values):
        if value is None:
            if anchor_index is not None:
                scan.censored += 1
                anchor_index = None
            continue
        if anchor_index is None:
            anchor_index, anchor = index, value
        elif abs(value - anchor) > d:
            scan.lengths.append(index - anchor_index)
            anchor_index, anchor = index, value
    if anchor_index is not None:
        scan.censored += 1
    return scan


def stability_intervals(series: SimilaritySeries, d: float = DEFAULT_SENSITIVITY) -> list[int]:
    """Lengths (in buckets) of intervals whose end was observed."""
    return scan_runs(series, d).lengths


def collect_user_runs(
    all_series: Iterable[SimilaritySeries], d: float = DEFAULT_SENSITIVITY
) -> dict[int, RunScan]:
    """Attribute every pair's runs to both of its users."""
    per_user: dict[int, RunScan] = {}
    for series in all_series:
        scan = scan_runs(series, d)
        for user in (series.pair.a, series.pair.b):
            per_user.setdefault(user, RunScan()).merge(scan)
    return per_user


@dataclass(frozen=True)
class IntervalHistogram:
    counts: dict[int, int]
    sensitivity: float = DEFAULT_SENSITIVITY

    def __post_init__(self) -> None:
        if self.sensitivity <= 0:
            raise InputError("sensitivity must be positive")
        if any(count < 0 for count in self.counts.values()):
            raise InputError("histogram counts must be non-negative")

    @property
    def total_intervals(self) -> int:
        return sum(self.counts.values())

    def points(self) -> list[tuple[int, int]]:
        return sorted(self.counts.items())


def histogram(lengths: Iterable[int], d: float = DEFAULT_SENSITIVITY) -> IntervalHistogram:
    return IntervalHistogram(dict(sorted(Counter(lengths).items())), sensitivity=d)


def moving_average(
    hist: IntervalHistogram, window: int = DEFAULT_WINDOW
) -> list[tuple[int, float]]:
    """Centered moving average over consecutive lengths; edges use a truncated window."""
    if window < 1 or window % 2 == 0:
        raise InputError(f"Smoothing window must be odd and >= 1, got {window}")
    if not hist.counts:
        return []
    lo, hi = min(hist.counts), max(hist.counts)
    lengths = np.arange(lo, hi + 1)
    values = np.array([hist.counts.get(int(n), 0) for n in lengths], dtype=np.float64)
    half = window // 2
    cumulative = np.concatenate(([0.0], np.cumsum(values)))
    index = np.arange(len(values))
    left = np.maximum(index - half, 0)
    right = np.minimum(index + half + 1, len(values))
    smoothed = (cumulative[right] - cumulative[left]) / (right - left)
    return [(int(n), float(v)) for n, v in zip(lengths, smoothed, strict=True)]


def probability_function(hist: IntervalHistogram) -> dict[int, float]:
    """p(n) = N(n) / sum N."""
    total = hist.total_intervals
    if total <= 0:
        raise UndefinedInputError("Cannot normalise an empty histogram")
    return {n: count / total for n, count in hist.points()}


@dataclass(frozen=True)
class SurvivalCurve:
    """k(t): monitored runs whose coefficient is still unchanged at t."""

    values: tuple[int, ...]

    def points(self) -> list[tuple[int, int]]:
        return list(enumerate(self.values))


def survival_curve(hist: IntervalHistogram, total_pairs: int) -> SurvivalCurve:
    """Running difference k(t) = k(t-1) - N(t), starting from the monitored total."""
    values = [total_pairs]
    last = max(hist.counts, default=0)
    for t in range(1, last + 1):
        remaining = values[-1] - hist.counts.get(t, 0)
        if remaining < 0:
            raise InconsistencyError(
                f"Survival count went negative at t={t}: {total_pairs} monitored runs "
                f"cannot end {hist.total_intervals} intervals"
            )
        values.append(remaining)
    return SurvivalCurve(tuple(values))


# -- emission --------------------------------------------------------------


def write_series_csv(all_series: Sequence[SimilaritySeries], grid: TimeGrid, stream: TextIO) -> int:
    """Table of coefficients per pair and bucket; absent values are empty cells."""
    header = ["userId1", "userId2", *(f"k@t{i + 1}" for i in range(grid.bucket_count))]
    rows = ([series.pair.a, series.pair.b, *series.values] for series in all_series)
    return write_rows(stream, header, rows)


def write_points_csv(
    points: Iterable[tuple[float, float]], header: Sequence[str], stream: TextIO
) -> int:
    """Two-column curve such as (n, N) or (t, k)."""
    return write_rows(stream, header, points)
