import math

import numpy as np
import pytest

from cmpmu import distribution as dist
from cmpmu.diagnostics import PitSample, pit, pit_histogram, pit_quantile_table, pit_values
from cmpmu.errors import LengthMismatch
from cmpmu.fit import ModelSpec, fit_glm


def _data(n, nu, seed):
    rng = np.random.default_rng(seed)
    X = np.column_stack([np.ones(n), rng.normal(size=n)])
    theta, _ = dist.solve_rate_batch(np.exp(X @ [1.0, 0.3]), nu)
    return X, dist.sample_rows(theta, nu, rng)


def test_zero_count_with_zero_smear():
    below, at = dist.pit_components(np.array([0]), np.array([math.log(2.0)]), 1.0)
    assert below[0] == 0.0  # F(-1)
    assert below[0] + 0.0 * at[0] == 0.0
    u = pit_values(np.zeros(100, dtype=int), np.full(100, math.log(2.0)), 1.0, seed=1)
    assert np.all((u >= 0) & (u <= at[0]))


def test_pit_values_reproducible():
    theta = np.full(50, math.log(3.0))
    y = np.arange(50) % 7
    assert np.array_equal(pit_values(y, theta, 1.0, 5), pit_values(y, theta, 1.0, 5))


def test_pit_length_mismatch():
    X, y = _data(100, 1.0, 0)
    m = fit_glm(ModelSpec(), X, y)
    with pytest.raises(LengthMismatch):
        pit(m, y[:-1], seed=1)


def test_correct_model_passes_ks():
    passed = 0
    for seed in range(100):
        X, y = _data(2000, 1.6, seed)
        m = fit_glm(ModelSpec(), X, y)
        passed += pit(m, y, seed).ks_statistic < 1.358 / math.sqrt(2000)
    assert passed >= 90


def test_misspecified_model_fails_ks():
    failed = 0
    for seed in range(100):
        X, y = _data(2000, 0.2, 500 + seed)
        m = fit_glm(ModelSpec(fixed_nu=1.0), X, y)
        failed += pit(m, y, seed).ks_statistic > 1.628 / math.sqrt(2000)
    assert failed >= 95


def test_quantile_table_on_uniform_grid():
    n = 200
    sample = PitSample((np.arange(n) + 0.5) / n, 0, 0.0)
    table = pit_quantile_table(sample, 17)
    assert table.shape == (17, 2)
    assert np.allclose(table[:, 0], table[:, 1], atol=1e-12)


def test_quantile_table_monotone():
    u = np.random.default_rng(3).random(500)
    table = pit_quantile_table(PitSample(u, 3, 0.0), 50)
    assert np.all(np.diff(table[:, 1]) >= 0)
    with pytest.raises(ValueError):
        pit_quantile_table(PitSample(u, 3, 0.0), 1)


def test_histogram_bin_centres():
    bins = 8
    centres = (np.arange(bins) + 0.5) / bins
    h = pit_histogram(PitSample(centres, 0, 0.0), bins)
    assert np.array_equal(h[:, 2], np.ones(bins))


def test_histogram_uniform_counts():
    n = 10_000
    u = np.random.default_rng(8).random(n)
    h = pit_histogram(PitSample(u, 8, 0.0), 10)
    assert h[:, 2].sum() == n
    assert np.all(np.abs(h[:, 2] - 1000) < 4 * math.sqrt(n * 0.1 * 0.9))
