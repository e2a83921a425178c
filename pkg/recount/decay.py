"""Exponential decay law fitting and the quantities derived from it.

The exponential model N(t) = N0 * exp(-lambda * t) is fitted by ordinary least
squares on (t, ln N). A power-law (Pareto) model c * t**-alpha is fitted the
same way on (ln t, ln N) so the two can be compared on their count-scale
residuals.
"""

from __future__ import annotations

import math
from collections.abc import Iterable, Sequence
from dataclasses import dataclass

import numpy as np

from recount._errors import InputError, InsufficientDataError

WORKING_HYPOTHESIS = (
    "exponential vs power-law preference is a working hypothesis; "
    "residual differences may be within plot noise"
)


@dataclass(frozen=True)
class DecayModel:
    n0: float
    lam: float
    residual_std: float = 0.0
    log_residual_std: float = 0.0
    fitted_points: int = 0
    excluded_points: int = 0

    def __post_init__(self) -> None:
        if not self.n0 > 0:
            raise InsufficientDataError(f"Fitted N0 must be positive, got {self.n0!r}")
        if not self.lam > 0:
            raise InsufficientDataError(
                f"Fitted decay rate must be positive, got {self.lam!r} (data is not decaying)"
            )

    @classmethod
    def from_rate(cls, lam: float) -> DecayModel:
        """A model carrying only a known decay rate."""
        if not lam > 0:
            raise InputError(f"Decay rate must be positive, got {lam!r}")
        return cls(n0=1.0, lam=lam)

    def predict(self, t: np.ndarray | float) -> np.ndarray | float:
        return self.n0 * np.exp(-self.lam * np.asarray(t, dtype=np.float64))


@dataclass(frozen=True)
class ParetoModel:
    c: float
    alpha: float
    residual_std: float = 0.0
    log_residual_std: float = 0.0
    fitted_points: int = 0
    excluded_points: int = 0

    def __post_init__(self) -> None:
        if not self.c > 0 or not self.alpha > 0:
            raise InsufficientDataError(
                f"Power-law fit needs c > 0 and alpha > 0, got c={self.c!r} alpha={self.alpha!r}"
            )

    def predict(self, t: np.ndarray | float) -> np.ndarray | float:
        return self.c * np.power(np.asarray(t, dtype=np.float64), -self.alpha)


def _usable(
    points: Iterable[tuple[float, float]], positive_t: bool
) -> tuple[np.ndarray, np.ndarray, int]:
    raw = [(float(t), float(n)) for t, n in points]
    kept = [(t, n) for t, n in raw if n > 0 and (t > 0 or not positive_t)]
    excluded = len(raw) - len(kept)
    if len({t for t, _ in kept}) < 2:
        raise InsufficientDataError(
            f"Need at least 2 distinct t with positive counts, got {len(kept)} usable points"
        )
    t_values = np.array([t for t, _ in kept], dtype=np.float64)
    n_values = np.array([n for _, n in kept], dtype=np.float64)
    return t_values, n_values, excluded


def _line(x: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    """Least-squares slope and intercept of y against x."""
    slope, intercept = np.polyfit(x, y, 1)
    return float(slope), float(intercept)


def _rms(residuals: np.ndarray) -> float:
    return float(math.sqrt(np.mean(residuals * residuals)))


def fit_exponential(points: Sequence[tuple[float, float]]) -> DecayModel:
    """Log-linear least squares fit of N(t) = N0 * exp(-lambda * t).

    Args:
        points: (t, N) pairs. Points with N <= 0 are excluded before the log
            transform and counted in `excluded_points`.

    Returns:
        The fitted model. `residual_std` is the RMS residual in counts,
        `log_residual_std` the RMS residual of ln N.
    """
    t, n, excluded = _usable(points, positive_t=False)
    log_n = np.log(n)
    slope, intercept = _line(t, log_n)
    lam = -slope
    n0 = math.exp(intercept)
    log_residuals = log_n - (intercept - lam * t)
    return DecayModel(
        n0=n0,
        lam=lam,
        residual_std=_rms(n - n0 * np.exp(-lam * t)),
        log_residual_std=_rms(log_residuals),
        fitted_points=len(t),
        excluded_points=excluded,
    )


def fit_pareto(points: Sequence[tuple[float, float]]) -> ParetoModel:
    """Log-log least squares fit of N(t) = c * t**-alpha (t <= 0 excluded)."""
    t, n, excluded = _usable(points, positive_t=True)
    log_t = np.log(t)
    log_n = np.log(n)
    slope, intercept = _line(log_t, log_n)
    c = math.exp(intercept)
    alpha = -slope
    return ParetoModel(
        c=c,
        alpha=alpha,
        residual_std=_rms(n - c * np.power(t, -alpha)),
        log_residual_std=_rms(log_n - (intercept + slope * log_t)),
        fitted_points=len(t),
        excluded_points=excluded,
    )


def regression_objective(points: Sequence[tuple[float, float]], log_n0: float, lam: float) -> float:
    """Sum of squared log residuals, the quantity the exponential fit minimises."""
    t, n, _ = _usable(points, positive_t=False)
    residuals = np.log(n) - (log_n0 - lam * t)
    return float(np.dot(residuals, residuals))


def mean_lifetime(model: DecayModel) -> float:
    """tau = 1 / lambda."""
    return 1.0 / model.lam


def half_life(model: DecayModel) -> float:
    """Time by which half of the monitored pairs have changed."""
    return math.log(2.0) / model.lam


def _check_time(t: float) -> None:
    if t < 0:
        raise InputError(f"Time must be non-negative, got {t}")


def p_change(model: DecayModel, t: float) -> float:
    """Probability that a coefficient has changed by time t."""
    _check_time(t)
    return -math.expm1(-model.lam * t)


def q_stable(model: DecayModel, t: float) -> float:
    """Probability that a coefficient is still unchanged at time t."""
    _check_time(t)
    return math.exp(-model.lam * t)


def stable_horizon(model: DecayModel, p_st: float) -> float:
    """Longest time over which preferences stay unchanged with probability p_st."""
    if not 0 < p_st <= 1:
        raise InputError(f"p_st must lie in (0, 1], got {p_st}")
    return -math.log(p_st) / model.lam


def change_horizon(model: DecayModel, q_st: float) -> float:
    """Time by which preferences change with probability q_st."""
    if not 0 <= q_st < 1:
        raise InputError(f"q_st must lie in [0, 1), got {q_st}")
    return -math.log1p(-q_st) / model.lam
