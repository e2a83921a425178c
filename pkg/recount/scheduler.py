"""Recompute scheduling: staleness rule, error model and service-time optimum."""

from __future__ import annotations

import dataclasses
import logging
import math
from collections.abc import Mapping
from dataclasses import dataclass

import numpy as np

from recount._errors import InfeasibleError, InputError, InsufficientDataError
from recount.decay import DecayModel, fit_exponential, stable_horizon
from recount.stability import DEFAULT_BUCKET_LEN, RunScan, histogram, survival_curve
from recount.store import GraphStore, SimilarityEdge, UserPair

logger = logging.getLogger(__name__)

DEFAULT_MIN_INTERVALS = 5
DEFAULT_GROUPS = 3


@dataclass(frozen=True)
class ServiceParams:
    """Technological constants and the error budget of the service model."""

    t_fr: float
    t_ir: float
    p_b: float
    n_cr: float
    tau_visit: float

    def __post_init__(self) -> None:
        if not 0 < self.t_ir < self.t_fr:
            raise InputError(f"Need 0 < t_ir < t_fr, got t_ir={self.t_ir} t_fr={self.t_fr}")
        if not 0 <= self.p_b < 1:
            raise InputError(f"p_b must lie in [0, 1), got {self.p_b}")
        if not self.n_cr < 1:
            raise InputError(f"n_cr must be below 1, got {self.n_cr}")
        if not self.tau_visit > 0:
            raise InputError(f"tau_visit must be positive, got {self.tau_visit}")
        if self.n_cr <= self.p_b:
            raise InfeasibleError(
                f"n_cr={self.n_cr} does not exceed the base error p_b={self.p_b}: "
                "no staleness budget is left"
            )


@dataclass(frozen=True)
class ScheduleSolution:
    t_cr: float
    mean_service_time: float
    load_coefficient: float
    lam: float
    bucket_len: int
    t_cr_seconds: float

    def as_dict(self) -> dict[str, float | int]:
        return dataclasses.asdict(self)


def needs_recompute(edge: SimilarityEdge, now: int) -> bool:
    """True once `now` reaches the edge's personal or cold-start period."""
    period = edge.recount_period if edge.recount_period is not None else edge.average_rp
    return now >= edge.last_recount_time + period


def _check_rate(lam: float) -> None:
    if not lam > 0:
        raise InputError(f"Decay rate must be positive, got {lam}")


def recommendation_error(lam: float, p_b: float, t: float) -> float:
    """Probability of a wrong list when coefficients are t time units old."""
    _check_rate(lam)
    if t < 0:
        raise InputError(f"Staleness must be non-negative, got {t}")
    if not 0 <= p_b < 1:
        raise InputError(f"p_b must lie in [0, 1), got {p_b}")
    return p_b + (1.0 - p_b) * -math.expm1(-lam * t)


def critical_time(lam: float, p_b: float, n_cr: float) -> float:
    """Largest staleness whose error probability stays within n_cr."""
    _check_rate(lam)
    if not 0 <= p_b < 1 or not n_cr < 1:
        raise InputError(f"Need 0 <= p_b < 1 and n_cr < 1, got p_b={p_b} n_cr={n_cr}")
    if n_cr <= p_b:
        raise InfeasibleError(f"n_cr={n_cr} must exceed the base error p_b={p_b}")
    return -math.log1p(-(n_cr - p_b) / (1.0 - p_b)) / lam


def mean_service_time(params: ServiceParams, t_cr: float) -> float:
    """Average per-visit cost when coefficients are reused for t_cr."""
    if t_cr < 0:
        raise InputError(f"t_cr must be non-negative, got {t_cr}")
    if math.isinf(t_cr):
        return params.t_ir
    return (params.t_fr * params.tau_visit + t_cr * params.t_ir) / (t_cr + params.tau_visit)


def load_coefficient(mean_time: float, t_fr: float) -> float:
    """Mean service time relative to recomputing on every visit."""
    if not t_fr > 0:
        raise InputError(f"t_fr must be positive, got {t_fr}")
    return mean_time / t_fr


def optimize(
    params: ServiceParams, lam: float, bucket_len: int = DEFAULT_BUCKET_LEN
) -> ScheduleSolution:
    """Take the largest admissible staleness; service time falls monotonically in it."""
    t_cr = critical_time(lam, params.p_b, params.n_cr)
    mean_time = mean_service_time(params, t_cr)
    return ScheduleSolution(
        t_cr=t_cr,
        mean_service_time=mean_time,
        load_coefficient=load_coefficient(mean_time, params.t_fr),
        lam=lam,
        bucket_len=bucket_len,
        t_cr_seconds=t_cr * bucket_len,
    )


# -- recomputation periods ---------------------------------------------------


def activity_groups(store: GraphStore, groups: int = DEFAULT_GROUPS) -> dict[int, int]:
    """Split users into `groups` quantiles of rating count (0 = least active)."""
    if groups < 1:
        raise InputError(f"groups must be >= 1, got {groups}")
    ranked = sorted(store.users, key=lambda user: (store.rating_count(user), user))
    assignment: dict[int, int] = {}
    for index, chunk in enumerate(np.array_split(np.array(ranked, dtype=np.int64), groups)):
        for user in chunk:
            assignment[int(user)] = index
    return assignment


def estimate_rate(scan: RunScan, min_intervals: int = DEFAULT_MIN_INTERVALS) -> float | None:
    """Decay rate fitted to the survival of a set of runs, if there is enough of it."""
    if len(scan.lengths) < min_intervals:
        return None
    curve = survival_curve(histogram(scan.lengths), scan.runs)
    points = [(float(t), float(k)) for t, k in curve.points() if k > 0]
    try:
        return fit_exponential(points).lam
    except InsufficientDataError:
        return None


def estimate_group_rates(
    user_runs: Mapping[int, RunScan],
    groups: Mapping[int, int],
    min_intervals: int = DEFAULT_MIN_INTERVALS,
) -> dict[int, float]:
    """Decay rate of each activity group, from the pooled runs of its members."""
    pooled: dict[int, RunScan] = {}
    for user, scan in sorted(user_runs.items()):
        if user in groups:
            pooled.setdefault(groups[user], RunScan()).merge(scan)
    rates = {group: estimate_rate(scan, min_intervals) for group, scan in sorted(pooled.items())}
    return {group: rate for group, rate in rates.items() if rate is not None}


def estimate_user_rates(
    user_runs: Mapping[int, RunScan],
    groups: Mapping[int, int] | None = None,
    min_intervals: int = DEFAULT_MIN_INTERVALS,
) -> dict[int, float]:
    """Per-user decay rates, falling back to the user's activity group.

    Users without a single completed interval stay out of the mapping: they
    are still in cold start and fall back to their group's average period.
    """
    rates: dict[int, float] = {}
    for user, scan in sorted(user_runs.items()):
        own = estimate_rate(scan, min_intervals)
        if own is not None:
            rates[user] = own

    group_rates = {} if groups is None else estimate_group_rates(user_runs, groups, min_intervals)
    for user, scan in sorted(user_runs.items()):
        if user in rates or not scan.lengths or groups is None or user not in groups:
            continue
        rate = group_rates.get(groups[user])
        if rate is not None:
            rates[user] = rate
    logger.debug("rates for %d of %d users", len(rates), len(user_runs))
    return rates


@dataclass(frozen=True)
class PeriodTable:
    """Recomputation periods in seconds.

    `average_rp` is the population period. Users whose activity group has a
    fitted rate use the group's period instead while they are in cold start.
    """

    average_rp: float
    user_periods: Mapping[int, float] = dataclasses.field(default_factory=dict)
    user_groups: Mapping[int, int] = dataclasses.field(default_factory=dict)
    group_periods: Mapping[int, float] = dataclasses.field(default_factory=dict)

    def average_rp_of(self, user: int) -> float:
        """The user's group period, or the population period."""
        group = self.user_groups.get(user)
        if group is None:
            return self.average_rp
        return self.group_periods.get(group, self.average_rp)

    def average_rp_for(self, pair: UserPair) -> float:
        """Cold-start period of an edge: the shorter of the two users' group periods."""
        return min(self.average_rp_of(pair.a), self.average_rp_of(pair.b))

    def recount_period(self, pair: UserPair) -> float | None:
        """The shorter personal period of the two users; None while either is cold."""
        first = self.user_periods.get(pair.a)
        second = self.user_periods.get(pair.b)
        if first is None or second is None:
            return None
        return min(first, second)


def _period(lam: float, p_st: float, bucket_len: int) -> float:
    return stable_horizon(DecayModel.from_rate(lam), p_st) * bucket_len


def period_table(
    lambda_global: float,
    p_st: float,
    bucket_len: int = DEFAULT_BUCKET_LEN,
    per_user_lambdas: Mapping[int, float] | None = None,
    groups: Mapping[int, int] | None = None,
    group_lambdas: Mapping[int, float] | None = None,
) -> PeriodTable:
    """Convert decay rates into recomputation periods in seconds.

    Args:
        lambda_global: Population decay rate, per grid bucket.
        p_st: Required probability that a coefficient is still stable.
        bucket_len: Seconds per grid bucket.
        per_user_lambdas: Personal rates of users past cold start.
        groups: Activity group of each user.
        group_lambdas: Pooled rate of each activity group.
    """
    if not 0 < p_st < 1:
        raise InputError(f"p_st must lie in (0, 1) to give a positive period, got {p_st}")
    return PeriodTable(
        average_rp=_period(lambda_global, p_st, bucket_len),
        user_periods={
            user: _period(lam, p_st, bucket_len) for user, lam in (per_user_lambdas or {}).items()
        },
        user_groups=dict(groups or {}),
        group_periods={
            group: _period(lam, p_st, bucket_len) for group, lam in (group_lambdas or {}).items()
        },
    )


def apply_periods(store: GraphStore, table: PeriodTable) -> GraphStore:
    """Write a period table onto every edge of the store."""
    for edge in store.edges():
        store.put_edge(
            dataclasses.replace(
                edge,
                average_rp=table.average_rp_for(edge.pair),
                recount_period=table.recount_period(edge.pair),
            )
        )
    return store


def assign_periods(
    store: GraphStore,
    lambda_global: float,
    p_st: float,
    bucket_len: int = DEFAULT_BUCKET_LEN,
    per_user_lambdas: Mapping[int, float] | None = None,
    groups: Mapping[int, int] | None = None,
    group_lambdas: Mapping[int, float] | None = None,
) -> GraphStore:
    """Write averageRP and (where known) recountPeriod onto every edge."""
    table = period_table(lambda_global, p_st, bucket_len, per_user_lambdas, groups, group_lambdas)
    return apply_periods(store, table)
