"""Statistics over Monte Carlo replicates of averaged runs.

The asymptotic claims under test: the scaled averaged error
sqrt(n) (x_bar - x_star) is centered Gaussian with the sandwich covariance
H^-1 Sigma H^-1, and the scaled objective gap n (f(x_bar) - f(x_star)) has
mean (1/2) tr(H^-1 Sigma).  This module computes both sides of each claim
from replicate batches plus delay-moment and speedup summaries.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

__all__ = [
    "ReplicateBatch",
    "sandwich",
    "empirical_covariance",
    "covariance_match",
    "gap_statistic",
    "GapStatistic",
    "delay_moment",
    "speedup",
]


@dataclass
class ReplicateBatch:
    """Scaled errors and gaps from R independent replicates of n steps."""

    n: int
    errors: np.ndarray
    gaps: np.ndarray

    def __post_init__(self):
        self.errors = np.atleast_2d(np.asarray(self.errors, dtype=np.float64))
        self.gaps = np.asarray(self.gaps, dtype=np.float64).ravel()
        if self.errors.shape[0] < 2:
            raise ValueError("need at least two replicates")
        if not (np.all(np.isfinite(self.errors)) and np.all(np.isfinite(self.gaps))):
            raise ValueError("replicate rows must be finite")

    @property
    def n_replicates(self) -> int:
        return self.errors.shape[0]


def sandwich(hess: np.ndarray, sigma: np.ndarray) -> np.ndarray:
    """H^-1 Sigma H^-1, symmetrized on output."""
    hess = np.asarray(hess, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    if hess.shape != sigma.shape or hess.ndim != 2 or hess.shape[0] != hess.shape[1]:
        raise ValueError("hess and sigma must be square matrices of equal shape")
    try:
        hinv_sigma = np.linalg.solve(hess, sigma)
        out = np.linalg.solve(hess.T, hinv_sigma.T).T
    except np.linalg.LinAlgError as err:
        raise ValueError(f"hess is singular: {err}") from err
    asym = np.abs(out - out.T).max() if out.size else 0.0
    if asym > 1e-10 * max(1.0, np.abs(out).max()):
        raise ValueError(f"sandwich product asymmetric by {asym:.3e}")
    return (out + out.T) / 2.0


def empirical_covariance(errors: np.ndarray) -> np.ndarray:
    """Unbiased sample covariance of the replicate rows (divisor R - 1)."""
    errors = np.atleast_2d(np.asarray(errors, dtype=np.float64))
    if errors.shape[0] < 2:
        raise ValueError("need at least two rows")
    centered = errors - errors.mean(axis=0, keepdims=True)
    return centered.T @ centered / (errors.shape[0] - 1)


def covariance_match(empirical: np.ndarray, theoretical: np.ndarray) -> float:
    """Relative Frobenius error ||emp - theo||_F / ||theo||_F."""
    empirical = np.asarray(empirical, dtype=np.float64)
    theoretical = np.asarray(theoretical, dtype=np.float64)
    if empirical.shape != theoretical.shape:
        raise ValueError("shape mismatch")
    denom = np.linalg.norm(theoretical)
    if denom == 0:
        raise ValueError("theoretical matrix has zero norm")
    return float(np.linalg.norm(empirical - theoretical) / denom)


class GapStatistic(NamedTuple):
    sample_mean: float
    predicted_mean: float
    ratio: float


def gap_statistic(gaps: np.ndarray, hess: np.ndarray,
                  sigma: np.ndarray) -> GapStatistic:
    """Sample mean of scaled gaps against the predicted (1/2) tr(H^-1 Sigma)."""
    gaps = np.asarray(gaps, dtype=np.float64).ravel()
    if gaps.size < 2:
        raise ValueError("need at least two replicates")
    try:
        predicted = 0.5 * float(np.trace(np.linalg.solve(hess, sigma)))
    except np.linalg.LinAlgError as err:
        raise ValueError(f"hess is singular: {err}") from err
    sample = float(gaps.mean())
    return GapStatistic(sample, predicted, sample / predicted)


def delay_moment(delays, order: float) -> float:
    """(mean of M^order)^(1/order) over the realized delays."""
    delays = np.asarray(delays, dtype=np.float64).ravel()
    if delays.size == 0:
        raise ValueError("empty delay list")
    if order <= 0:
        raise ValueError("order must be positive")
    return float(np.mean(delays ** order) ** (1.0 / order))


def speedup(single_core_epoch_seconds: float,
            m_core_epoch_seconds: float) -> float:
    """Average single-core epoch time divided by the m-core epoch time."""
    if single_core_epoch_seconds <= 0 or m_core_epoch_seconds <= 0:
        raise ValueError("epoch times must be positive")
    return single_core_epoch_seconds / m_core_epoch_seconds
