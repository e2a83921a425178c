"""Pearson user similarity in definitional and accumulator (fast) forms."""

from __future__ import annotations

import math
from collections.abc import Mapping
from dataclasses import dataclass

import numpy as np

from recount.store import GraphStore, UserPair

DEFAULT_MIN_OVERLAP = 3

# radicands at or below this are treated as zero variance
_VARIANCE_TOL = 1e-12


@dataclass(frozen=True)
class PairVectors:
    """Ratings of two users restricted to their co-rated items."""

    co_items: tuple[int, ...]
    r1: tuple[float, ...]
    r2: tuple[float, ...]

    def __post_init__(self) -> None:
        if not len(self.co_items) == len(self.r1) == len(self.r2):
            raise ValueError("co_items, r1 and r2 must be aligned")

    @property
    def n(self) -> int:
        return len(self.co_items)


@dataclass
class SimilarityAccumulators:
    """Running sums the fast form needs."""

    n: int = 0
    sum1: float = 0.0
    sum2: float = 0.0
    sum1sq: float = 0.0
    sum2sq: float = 0.0
    sum12: float = 0.0

    def add(self, r1: float, r2: float) -> None:
        self.n += 1
        self.sum1 += r1
        self.sum2 += r2
        self.sum1sq += r1 * r1
        self.sum2sq += r2 * r2
        self.sum12 += r1 * r2

    @classmethod
    def from_vectors(cls, pv: PairVectors) -> SimilarityAccumulators:
        acc = cls()
        for r1, r2 in zip(pv.r1, pv.r2, strict=True):
            acc.add(r1, r2)
        return acc


def _clamp(value: float) -> float:
    return max(-1.0, min(1.0, value))


def vectors_from_ratings(first: Mapping[int, float], second: Mapping[int, float]) -> PairVectors:
    """Align two item->rating mappings on their common items."""
    if len(first) > len(second):
        common = sorted(item for item in second if item in first)
    else:
        common = sorted(item for item in first if item in second)
    return PairVectors(
        co_items=tuple(common),
        r1=tuple(first[item] for item in common),
        r2=tuple(second[item] for item in common),
    )


def co_rated(store: GraphStore, u1: int, u2: int, asof: int) -> PairVectors:
    """Items both users rated at or before `asof`, with their latest ratings."""
    return vectors_from_ratings(store.ratings_asof(u1, asof), store.ratings_asof(u2, asof))


def pearson_definitional(
    pv: PairVectors, min_overlap: int = DEFAULT_MIN_OVERLAP
) -> float | None:
    """Mean-deviation form; None when undefined."""
    if pv.n < max(min_overlap, 1):
        return None
    x = np.asarray(pv.r1, dtype=np.float64)
    y = np.asarray(pv.r2, dtype=np.float64)
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(np.dot(dx, dx))
    syy = float(np.dot(dy, dy))
    if sxx <= _VARIANCE_TOL or syy <= _VARIANCE_TOL:
        return None
    return _clamp(float(np.dot(dx, dy)) / (math.sqrt(sxx) * math.sqrt(syy)))


def pearson_fast(
    acc: SimilarityAccumulators, min_overlap: int = DEFAULT_MIN_OVERLAP
) -> float | None:
    """Sum form evaluated from accumulators; None when undefined."""
    if acc.n < max(min_overlap, 1):
        return None
    n = acc.n
    radicand1 = n * acc.sum1sq - acc.sum1 * acc.sum1
    radicand2 = n * acc.sum2sq - acc.sum2 * acc.sum2
    if radicand1 <= _VARIANCE_TOL or radicand2 <= _VARIANCE_TOL:
        return None
    numerator = n * acc.sum12 - acc.sum1 * acc.sum2
    return _clamp(numerator / (math.sqrt(radicand1) * math.sqrt(radicand2)))


def compute_pair(
    store: GraphStore,
    pair: UserPair,
    asof: int,
    min_overlap: int = DEFAULT_MIN_OVERLAP,
) -> float | None:
    """Similarity of a pair over ratings given at or before `asof`."""
    pv = co_rated(store, pair.a, pair.b, asof)
    return pearson_fast(SimilarityAccumulators.from_vectors(pv), min_overlap)
