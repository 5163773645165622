"""Randomized probability integral transform for count models."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from .distribution import pit_components
from .errors import LengthMismatch


@dataclass(frozen=True)
class PitSample:
    values: np.ndarray
    seed: int
    ks_statistic: float


def ks_uniform(values):
    """Sup distance between the empirical cdf of ``values`` and U(0, 1)."""
    return float(stats.kstest(values, "uniform").statistic)


def pit_values(y, log_lambda, nu, seed):
    """u_i = F(y_i - 1) + v_i p(y_i) with v_i ~ U(0, 1) drawn from ``seed``."""
    below, at = pit_components(y, log_lambda, nu)
    v = np.random.default_rng(seed).random(below.shape[0])
    return np.clip(below + v * at, 0.0, 1.0)


def pit(model, y, seed):
    """Randomized PIT of counts ``y`` under a fitted model's per-row (mu, nu)."""
    y = np.asarray(y)
    if y.shape[0] != model.per_obs_mu.shape[0]:
        raise LengthMismatch(
            f"model has {model.per_obs_mu.shape[0]} rows, data has {y.shape[0]}"
        )
    u = pit_values(y, model.per_obs_log_lambda, model.per_obs_nu, seed)
    return PitSample(u, int(seed), ks_uniform(u))


def pit_quantile_table(sample, grid):
    """``grid`` rows of (uniform quantile, PIT quantile).

    Sorted PIT values sit at plotting positions (i - 0.5)/n; PIT quantiles
    at the equispaced probabilities (j - 0.5)/grid are read off by linear
    interpolation.
    """
    if grid < 2:
        raise ValueError("grid must be at least 2")
    u = np.sort(sample.values)
    n = u.shape[0]
    positions = (np.arange(1, n + 1) - 0.5) / n
    probs = (np.arange(1, grid + 1) - 0.5) / grid
    return np.column_stack([probs, np.interp(probs, positions, u)])


def pit_histogram(sample, bins):
    """Equal-width bins on [0, 1]: rows of (left edge, right edge, count)."""
    if bins < 1:
        raise ValueError("bins must be positive")
    counts, edges = np.histogram(sample.values, bins=bins, range=(0.0, 1.0))
    return np.column_stack([edges[:-1], edges[1:], counts])
