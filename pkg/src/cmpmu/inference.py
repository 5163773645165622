"""Wald and likelihood-ratio tests for fitted models."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from .errors import NotNested, SingularConstraintCov

NESTING_TOL = 1e-6


@dataclass(frozen=True)
class Hypothesis:
    """Linear hypothesis ``M beta = delta``."""

    constraint_matrix: np.ndarray
    rhs: np.ndarray

    def __post_init__(self):
        m = np.atleast_2d(np.asarray(self.constraint_matrix, dtype=float))
        d = np.atleast_1d(np.asarray(self.rhs, dtype=float))
        if d.shape != (m.shape[0],):
            raise ValueError("rhs length must equal the number of constraint rows")
        if np.linalg.matrix_rank(m) < m.shape[0]:
            raise ValueError("constraint matrix must have full row rank")
        object.__setattr__(self, "constraint_matrix", m)
        object.__setattr__(self, "rhs", d)

    @property
    def r(self):
        return self.constraint_matrix.shape[0]

    @classmethod
    def zero_coefficients(cls, q, indices):
        """``beta_j = 0`` for every ``j`` in ``indices``."""
        m = np.zeros((len(indices), q))
        m[np.arange(len(indices)), list(indices)] = 1.0
        return cls(m, np.zeros(len(indices)))


@dataclass(frozen=True)
class TestResult:
    statistic: float
    df: tuple[int, int | None]
    p_chi2: float
    p_f: float | None = None
    method: str = "wald"

    __test__ = False  # not a pytest class

    def as_dict(self):
        return {
            "method": self.method,
            "statistic": self.statistic,
            "df": list(self.df),
            "p_chi2": self.p_chi2,
            "p_f": self.p_f,
        }


def wald_test(model, h):
    """Wald statistic for ``h`` using the plug-in covariance of beta."""
    m, d = h.constraint_matrix, h.rhs
    if m.shape[1] != model.beta.shape[0]:
        raise ValueError("hypothesis and model dimensions differ")
    diff = m @ model.beta - d
    cov = m @ model.cov_beta @ m.T
    cond = np.linalg.cond(cov)
    if not np.isfinite(cond) or cond > 1e14:
        raise SingularConstraintCov("constraint covariance is singular")
    stat = float(max(diff @ np.linalg.solve(cov, diff), 0.0))
    return TestResult(stat, (h.r, None), float(stats.chi2.sf(stat, h.r)), None, "wald")


def _lr_statistic(full, restricted):
    gap = full.loglik - restricted.loglik
    if gap < -NESTING_TOL:
        raise NotNested(
            f"restricted loglik exceeds full loglik by {-gap:.3g}; models are not nested"
        )
    return max(2.0 * gap, 0.0)


def lrt_composite(full, restricted, r, f_calibrate=False):
    """Likelihood ratio test of ``r`` linear constraints on the mean model.

    With ``f_calibrate`` the statistic divided by ``r`` is also referred to
    F(r, n - q), where q counts the full model's mean coefficients only.
    """
    if r < 1:
        raise ValueError("r must be positive")
    stat = _lr_statistic(full, restricted)
    p_chi2 = float(stats.chi2.sf(stat, r))
    if not f_calibrate:
        return TestResult(stat, (r, None), p_chi2, None, "lrt")
    df2 = full.n_obs - full.n_mean_params
    if df2 < 1:
        raise ValueError("no residual degrees of freedom for F calibration")
    p_f = float(stats.f.sf(stat / r, r, df2))
    return TestResult(stat, (r, df2), p_chi2, p_f, "lrt")


def lrt_poisson(full, poisson_fit):
    """Test of nu = 1 against a CMP fit of the same mean model."""
    if poisson_fit.dispersion != "fixed" or poisson_fit.nu != 1.0:
        raise ValueError("poisson_fit must be fitted with fixed_nu = 1")
    stat = _lr_statistic(full, poisson_fit)
    return TestResult(stat, (1, None), float(stats.chi2.sf(stat, 1)), None, "lrt_poisson")


def compare(models, names=None):
    """Rows ``(name, loglik, aic, np)`` sorted by AIC, smallest first."""
    if not models:
        raise ValueError("need at least one model")
    names = names or [f"model{i + 1}" for i in range(len(models))]
    rows = [
        {"name": nm, "loglik": m.loglik, "aic": m.aic, "np": m.n_params}
        for nm, m in zip(names, models)
    ]
    return sorted(rows, key=lambda row: row["aic"])
