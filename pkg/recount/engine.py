"""Neighbourhood prediction, Top-N lists, evaluation, policy replay and bot rings."""

from __future__ import annotations

import enum
import logging
import math
from collections.abc import Collection, Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from typing import NamedTuple

import networkx as nx

from recount._errors import InputError, UndefinedMetricError
from recount.scheduler import PeriodTable, ServiceParams, needs_recompute
from recount.similarity import (
    DEFAULT_MIN_OVERLAP,
    SimilarityAccumulators,
    compute_pair,
    pearson_fast,
    vectors_from_ratings,
)
from recount.stability import (
    DEFAULT_SENSITIVITY,
    SimilaritySeries,
    TimeGrid,
    build_all_series,
    select_pairs,
)
from recount.store import GraphStore, RatingEvent, SimilarityEdge, UserPair, build_store

logger = logging.getLogger(__name__)

MIN_RATING = 0.5
MAX_RATING = 5.0
DEFAULT_K_NEIGHBORS = 20
DEFAULT_TOP_N = 10
DEFAULT_RELEVANCE = 4.0


@dataclass(frozen=True)
class Prediction:
    user_id: int
    item_id: int
    predicted_rating: float
    support: int
    negative_support: int = 0


class _Neighbor(NamedTuple):
    user: int
    coefficient: float
    ratings: dict[int, float]
    mean: float


def _mean(ratings: Mapping[int, float]) -> float:
    return math.fsum(ratings.values()) / len(ratings)


def _neighborhood(
    store: GraphStore,
    user: int,
    asof: int,
    exclude_users: Collection[int] = (),
) -> list[_Neighbor]:
    """Users linked to `user` by a stored similarity edge, most similar first."""
    neighbors = []
    for edge in store.edges_of(user):
        other = edge.pair.other(user)
        if other in exclude_users:
            continue
        ratings = store.ratings_asof(other, asof)
        if ratings:
            neighbors.append(_Neighbor(other, edge.coefficient, ratings, _mean(ratings)))
    neighbors.sort(key=lambda neighbor: (-neighbor.coefficient, neighbor.user))
    return neighbors


def _predict_from(
    user: int,
    user_mean: float,
    neighbors: Sequence[_Neighbor],
    item: int,
    k_neighbors: int,
    min_coefficient: float | None,
) -> Prediction | None:
    raters = [neighbor for neighbor in neighbors if item in neighbor.ratings]
    negative = 0
    if min_coefficient is not None:
        negative = sum(neighbor.coefficient < min_coefficient for neighbor in raters)
        raters = [neighbor for neighbor in raters if neighbor.coefficient >= min_coefficient]
    raters = raters[:k_neighbors]
    weight = math.fsum(abs(neighbor.coefficient) for neighbor in raters)
    if not raters or weight == 0:
        return None
    deviation = math.fsum(
        neighbor.coefficient * (neighbor.ratings[item] - neighbor.mean) for neighbor in raters
    )
    value = min(MAX_RATING, max(MIN_RATING, user_mean + deviation / weight))
    return Prediction(user, item, value, len(raters), negative)


def predict(
    store: GraphStore,
    user: int,
    item: int,
    asof: int,
    k_neighbors: int = DEFAULT_K_NEIGHBORS,
    min_coefficient: float | None = None,
    exclude_users: Collection[int] = (),
) -> Prediction | None:
    """Mean-centred weighted average over the k most similar neighbours who rated `item`.

    Args:
        store: Store holding ratings and the similarity edges to use.
        user: The user to predict for.
        item: The item to predict.
        asof: Only ratings given at or before this time are used.
        k_neighbors: Neighbourhood size.
        min_coefficient: Neighbours below this coefficient are left out (and
            counted in `negative_support`). None keeps all of them.
        exclude_users: Users whose data must be disregarded (e.g. bot rings).

    Returns:
        The prediction, or None when no neighbour rated the item.
    """
    own = store.ratings_asof(user, asof)
    if not own:
        return None
    neighbors = _neighborhood(store, user, asof, exclude_users)
    return _predict_from(user, _mean(own), neighbors, item, k_neighbors, min_coefficient)


def top_n(
    store: GraphStore,
    user: int,
    asof: int,
    n: int = DEFAULT_TOP_N,
    k_neighbors: int = DEFAULT_K_NEIGHBORS,
    min_coefficient: float | None = 0.0,
    exclude_users: Collection[int] = (),
) -> list[int]:
    """Unrated items by predicted rating (descending), ties by item id."""
    if n < 1:
        raise InputError(f"n must be >= 1, got {n}")
    own = store.ratings_asof(user, asof)
    if not own:
        return []
    neighbors = _neighborhood(store, user, asof, exclude_users)
    user_mean = _mean(own)
    candidates = sorted({item for neighbor in neighbors for item in neighbor.ratings} - set(own))
    scored = []
    for item in candidates:
        prediction = _predict_from(user, user_mean, neighbors, item, k_neighbors, min_coefficient)
        if prediction is not None:
            scored.append((-prediction.predicted_rating, item))
    scored.sort()
    return [item for _, item in scored[:n]]


# -- evaluation ----------------------------------------------------------------


def _held_out(events: Iterable[RatingEvent]) -> dict[int, dict[int, float]]:
    latest: dict[int, dict[int, float]] = {}
    for ev in events:
        latest.setdefault(ev.user_id, {})[ev.item_id] = ev.rating
    return latest


def evaluate_top_n(
    store: GraphStore,
    test_ratings: Mapping[int, Mapping[int, float]],
    asof: int,
    n: int = DEFAULT_TOP_N,
    relevance_threshold: float = DEFAULT_RELEVANCE,
    k_neighbors: int = DEFAULT_K_NEIGHBORS,
    exclude_users: Collection[int] = (),
) -> tuple[float, float]:
    """Precision and recall of the store's Top-N lists against held-out ratings.

    Relevant items are those first rated after `asof` with a rating at or
    above the threshold. Users with no relevant item are skipped.
    """
    precisions: list[float] = []
    recalls: list[float] = []
    for user in sorted(test_ratings):
        if user not in store.users or user in exclude_users:
            continue
        seen = store.ratings_asof(user, asof)
        relevant = {
            item
            for item, rating in test_ratings[user].items()
            if rating >= relevance_threshold and item not in seen
        }
        if not relevant:
            continue
        recommended = top_n(store, user, asof, n, k_neighbors, exclude_users=exclude_users)
        hits = len(relevant.intersection(recommended))
        precisions.append(hits / len(recommended) if recommended else 0.0)
        recalls.append(hits / len(relevant))
    if not precisions:
        raise UndefinedMetricError("No test user has a relevant held-out item")
    return math.fsum(precisions) / len(precisions), math.fsum(recalls) / len(recalls)


def refresh_all_edges(
    store: GraphStore,
    users: Iterable[int],
    now: int,
    min_overlap: int = DEFAULT_MIN_OVERLAP,
    average_rp: float = math.inf,
) -> GraphStore:
    """Recompute and store every edge touching `users` as of `now`.

    Edges already in the store keep their periods; new ones get `average_rp`.
    """
    everyone = sorted(store.users)
    done: set[UserPair] = set()
    for user in sorted(set(users)):
        for other in everyone:
            if other == user:
                continue
            pair = UserPair(user, other)
            if pair in done:
                continue
            done.add(pair)
            coefficient = compute_pair(store, pair, now, min_overlap)
            existing = store.get_edge(pair)
            if coefficient is None:
                store.remove_edge(pair)
            elif existing is not None:
                store.put_edge(existing.refreshed(coefficient, now))
            else:
                store.put_edge(SimilarityEdge(pair, coefficient, None, average_rp, now))
    return store


def precision_recall(
    store: GraphStore,
    split_time: int,
    n: int = DEFAULT_TOP_N,
    relevance_threshold: float = DEFAULT_RELEVANCE,
    k_neighbors: int = DEFAULT_K_NEIGHBORS,
    min_overlap: int = DEFAULT_MIN_OVERLAP,
    exclude_users: Collection[int] = (),
) -> tuple[float, float]:
    """Train on ratings up to `split_time`, score Top-N against the rest."""
    span = store.time_range()
    if span is None or not span[0] <= split_time < span[1]:
        raise InputError(f"split_time {split_time} lies outside the log's time range {span}")
    train_events = []
    test_events = []
    for ev in store.iter_events():
        (train_events if ev.timestamp <= split_time else test_events).append(ev)
    train = build_store(train_events)
    test_ratings = _held_out(test_events)
    eligible = [user for user in sorted(test_ratings) if user in train.users]
    refresh_all_edges(train, eligible, split_time, min_overlap)
    return evaluate_top_n(
        train, test_ratings, split_time, n, relevance_threshold, k_neighbors, exclude_users
    )


# -- replay ------------------------------------------------------------------


class PolicyKind(enum.Enum):
    ALWAYS = "always"
    PERIODIC = "periodic"
    ADAPTIVE = "adaptive"


@dataclass(frozen=True)
class Policy:
    kind: PolicyKind
    interval: float = 0.0
    periods: PeriodTable | None = None

    @classmethod
    def always(cls) -> Policy:
        return cls(PolicyKind.ALWAYS)

    @classmethod
    def periodic(cls, interval: float) -> Policy:
        if interval < 0:
            raise InputError(f"Periodic interval must be non-negative, got {interval}")
        return cls(PolicyKind.PERIODIC, interval=interval)

    @classmethod
    def adaptive(cls, periods: PeriodTable) -> Policy:
        return cls(PolicyKind.ADAPTIVE, periods=periods)

    @property
    def name(self) -> str:
        if self.kind is PolicyKind.PERIODIC:
            return f"periodic({self.interval:g})"
        return self.kind.value

    def edge_for(self, pair: UserPair, coefficient: float, now: int) -> SimilarityEdge:
        if self.periods is not None:
            return SimilarityEdge(
                pair,
                coefficient,
                self.periods.recount_period(pair),
                self.periods.average_rp_for(pair),
                now,
            )
        average_rp = self.interval if self.interval > 0 else math.inf
        return SimilarityEdge(pair, coefficient, None, average_rp, now)


@dataclass(frozen=True)
class ReplayCheckpoint:
    time: int
    recompute_count: int
    served_requests: int
    mean_service_time: float
    n_fr_fraction: float
    n_ir_fraction: float
    precision_at_n: float | None = None
    recall_at_n: float | None = None


@dataclass(frozen=True)
class ReplayMetrics:
    policy: str
    recompute_count: int
    served_requests: int
    simulated_mean_service_time: float
    precision_at_n: float | None
    recall_at_n: float | None
    n_fr_fraction: float
    n_ir_fraction: float
    checkpoints: tuple[ReplayCheckpoint, ...] = ()


def _moved(cached: float | None, fresh: float | None, d: float) -> bool:
    if cached is None or fresh is None:
        return cached is not fresh
    return abs(fresh - cached) > d


@dataclass
class _Tally:
    recomputes: int = 0
    cached: int = 0
    unneeded: int = 0
    repeat_recomputes: int = 0
    missed: int = 0

    @property
    def served(self) -> int:
        return self.recomputes + self.cached

    def mean_time(self, params: ServiceParams) -> float:
        if not self.served:
            return 0.0
        return (self.recomputes * params.t_fr + self.cached * params.t_ir) / self.served

    def n_fr(self) -> float:
        return self.unneeded / self.repeat_recomputes if self.repeat_recomputes else 0.0

    def n_ir(self) -> float:
        return self.missed / self.cached if self.cached else 0.0

    def checkpoint(self, time: int, params: ServiceParams) -> ReplayCheckpoint:
        return ReplayCheckpoint(
            time=time,
            recompute_count=self.recomputes,
            served_requests=self.served,
            mean_service_time=self.mean_time(params),
            n_fr_fraction=self.n_fr(),
            n_ir_fraction=self.n_ir(),
        )


@dataclass
class _ReplayState:
    store: GraphStore = field(default_factory=GraphStore)
    latest: dict[int, dict[int, float]] = field(default_factory=dict)
    last_recompute: dict[int, int] = field(default_factory=dict)


def _wants_recompute(policy: Policy, state: _ReplayState, user: int, now: int) -> bool:
    if user not in state.last_recompute:
        return True
    if policy.kind is PolicyKind.ALWAYS:
        return True
    if policy.kind is PolicyKind.PERIODIC:
        return now >= state.last_recompute[user] + policy.interval
    edges = state.store.edges_of(user)
    if edges:
        return any(needs_recompute(edge, now) for edge in edges)
    if policy.periods is None:
        raise InputError("The adaptive policy needs a period table")
    return now >= state.last_recompute[user] + policy.periods.average_rp_of(user)


def replay(
    events: Iterable[RatingEvent],
    policy: Policy,
    service_params: ServiceParams,
    grid: TimeGrid,
    d: float = DEFAULT_SENSITIVITY,
    min_overlap: int = DEFAULT_MIN_OVERLAP,
    split_time: int | None = None,
    n: int = DEFAULT_TOP_N,
    relevance_threshold: float = DEFAULT_RELEVANCE,
    k_neighbors: int = DEFAULT_K_NEIGHBORS,
) -> ReplayMetrics:
    """Feed a rating log through a recompute policy and account for its cost.

    Every rating event is a visit by its user. The policy decides whether the
    visit pays for a full recomputation of the user's coefficients or is
    served from the cached edges. An always-fresh shadow computation tells
    whether that decision was wrong (a coefficient moved by more than d).

    Events after `split_time` are held out and used to score the Top-N lists
    built from the edges the policy left behind.
    """
    if policy.kind is PolicyKind.ADAPTIVE and policy.periods is None:
        raise InputError("The adaptive policy needs a period table")
    state = _ReplayState()
    tally = _Tally()
    checkpoints: list[ReplayCheckpoint] = []
    held_out: list[RatingEvent] = []
    next_bucket = 0
    previous: int | None = None

    for ev in events:
        if previous is not None and ev.timestamp < previous:
            raise InputError(
                f"Events out of order: {ev.timestamp} after {previous} (user {ev.user_id})"
            )
        previous = ev.timestamp
        if split_time is not None and ev.timestamp > split_time:
            held_out.append(ev)
            continue
        while next_bucket < grid.bucket_count and ev.timestamp > grid.bucket_end(next_bucket):
            checkpoints.append(tally.checkpoint(grid.bucket_end(next_bucket), service_params))
            next_bucket += 1

        user, now = ev.user_id, ev.timestamp
        state.store.upsert_rating(ev)
        state.latest.setdefault(user, {})[ev.item_id] = ev.rating

        own = state.latest[user]
        fresh: dict[int, float | None] = {}
        moved = False
        for other in sorted(state.store.users):
            if other == user:
                continue
            pv = vectors_from_ratings(own, state.latest[other])
            fresh[other] = pearson_fast(SimilarityAccumulators.from_vectors(pv), min_overlap)
            edge = state.store.get_edge(UserPair(user, other))
            cached = edge.coefficient if edge is not None else None
            moved = moved or _moved(cached, fresh[other], d)

        if _wants_recompute(policy, state, user, now):
            if user in state.last_recompute:
                tally.repeat_recomputes += 1
                tally.unneeded += not moved
            tally.recomputes += 1
            state.last_recompute[user] = now
            for other, coefficient in fresh.items():
                pair = UserPair(user, other)
                if coefficient is None:
                    state.store.remove_edge(pair)
                else:
                    state.store.put_edge(policy.edge_for(pair, coefficient, now))
        else:
            tally.cached += 1
            tally.missed += moved

    end_time = split_time if split_time is not None else (previous if previous is not None else 0)
    while next_bucket < grid.bucket_count and grid.bucket_end(next_bucket) < end_time:
        checkpoints.append(tally.checkpoint(grid.bucket_end(next_bucket), service_params))
        next_bucket += 1

    precision: float | None = None
    recall: float | None = None
    if split_time is not None and held_out:
        try:
            precision, recall = evaluate_top_n(
                state.store,
                _held_out(held_out),
                split_time,
                n,
                relevance_threshold,
                k_neighbors,
            )
        except UndefinedMetricError:
            logger.warning("no held-out user with relevant items; precision/recall left empty")

    final = tally.checkpoint(end_time, service_params)
    checkpoints.append(
        ReplayCheckpoint(
            time=final.time,
            recompute_count=final.recompute_count,
            served_requests=final.served_requests,
            mean_service_time=final.mean_service_time,
            n_fr_fraction=final.n_fr_fraction,
            n_ir_fraction=final.n_ir_fraction,
            precision_at_n=precision,
            recall_at_n=recall,
        )
    )
    logger.info(
        "%s: %d recomputes over %d visits", policy.name, tally.recomputes, tally.served
    )
    return ReplayMetrics(
        policy=policy.name,
        recompute_count=tally.recomputes,
        served_requests=tally.served,
        simulated_mean_service_time=tally.mean_time(service_params),
        precision_at_n=precision,
        recall_at_n=recall,
        n_fr_fraction=tally.n_fr(),
        n_ir_fraction=tally.n_ir(),
        checkpoints=tuple(checkpoints),
    )


# -- bot rings -----------------------------------------------------------------


@dataclass(frozen=True)
class BotRing:
    members: frozenset[int]
    min_pairwise_k: float
    stable_duration: int


def _longest_high_run(series: SimilaritySeries, floor: float) -> tuple[int, float]:
    """Longest run of consecutive buckets with 1 - eps <= k <= 1, and its lowest k."""
    best_length, best_min = 0, 1.0
    length, low = 0, 1.0
    for value in series.values:
        if value is not None and floor <= value <= 1.0:
            length += 1
            low = min(low, value) if length > 1 else value
            if length > best_length:
                best_length, best_min = length, low
        else:
            length = 0
    return best_length, best_min


def detect_bot_rings(
    store: GraphStore,
    grid: TimeGrid,
    epsilon: float = 0.01,
    min_duration: int = 3,
    min_size: int = 3,
    min_overlap: int = DEFAULT_MIN_OVERLAP,
    pairs: Sequence[UserPair] | None = None,
    workers: int = 1,
) -> list[BotRing]:
    """Groups of users whose pairwise similarity stays near one for long enough.

    A pair qualifies when its series stays within [1 - epsilon, 1] for at
    least `min_duration` consecutive buckets. Rings are the maximal cliques of
    the qualifying-pair graph with at least `min_size` members, so every pair
    inside a ring qualifies on its own. Cliques may share members.
    """
    if not 0 < epsilon < 1:
        raise InputError(f"epsilon must lie in (0, 1), got {epsilon}")
    if min_duration < 1 or min_size < 2:
        raise InputError("min_duration must be >= 1 and min_size >= 2")
    if pairs is None:
        pairs = select_pairs(store, grid, min_span=min_duration, min_overlap=min_overlap)

    graph = nx.Graph()
    for series in build_all_series(store, pairs, grid, min_overlap, workers):
        length, low = _longest_high_run(series, 1.0 - epsilon)
        if length >= min_duration:
            graph.add_edge(series.pair.a, series.pair.b, duration=length, min_k=low)

    rings = []
    for clique in nx.find_cliques(graph):
        if len(clique) < min_size:
            continue
        edges = graph.subgraph(clique).edges(data=True)
        rings.append(
            BotRing(
                members=frozenset(clique),
                min_pairwise_k=min(data["min_k"] for _, _, data in edges),
                stable_duration=min(data["duration"] for _, _, data in edges),
            )
        )
    rings.sort(key=lambda ring: sorted(ring.members))
    logger.info("found %d candidate bot rings", len(rings))
    return rings
