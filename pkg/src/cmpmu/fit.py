"""Maximum-likelihood fitting for iid samples and CMP-mu regression models.

Regression fits alternate between a Fisher-scoring step for the mean
coefficients and one for the dispersion coefficients, each guarded by
step-halving on the log-likelihood.  The mean and dispersion parameters are
orthogonal, so the expected cross-information is zero and the blocks can be
updated separately.

The dispersion is always optimized on the log scale: a constant dispersion
is a dispersion regression on an intercept column, ``nu = exp(gamma_0)``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize
from scipy.special import gammaln

from . import distribution as dist
from .errors import (
    DegenerateData,
    MeanOverflow,
    NoConvergence,
    RankDeficientDesign,
    SingularInformation,
    TruncationLimit,
)
from .formula import DesignMatrix, build_design, parse_formula

log = logging.getLogger(__name__)

GRAD_TOL = 1e-8
LOGLIK_RTOL = 1e-10
MAX_ITER = 100
MEAN_CAP = 1e6
COND_MAX = 1e12
# inner rate solves are tighter than the distribution default so that the
# dispersion score is not dominated by solver error
_SOLVE_TOL = 1e-13
_MAX_HALVINGS = 40


@dataclass(frozen=True)
class ModelSpec:
    """What to fit: response column, mean formula, link, dispersion formula,
    exposure column and an optional fixed dispersion."""

    response: str = "y"
    mean_terms: str = ""
    link: str = "log"
    dispersion_terms: str | None = None
    offset: str | None = None
    fixed_nu: float | None = None

    def __post_init__(self):
        if self.link not in ("log", "identity"):
            raise ValueError(f"unsupported link {self.link!r}")
        if self.fixed_nu is not None and not self.fixed_nu > 0:
            raise ValueError("fixed_nu must be positive")
        if self.fixed_nu is not None and self.dispersion_terms:
            raise ValueError("fixed_nu and dispersion_terms are exclusive")


@dataclass
class FittedModel:
    beta: np.ndarray
    cov_beta: np.ndarray
    loglik: float
    aic: float
    n_obs: int
    converged: bool
    iterations: int
    per_obs_mu: np.ndarray
    per_obs_nu: np.ndarray
    per_obs_log_lambda: np.ndarray
    labels: list[str]
    link: str = "log"
    dispersion: str = "constant"  # "constant", "regression" or "fixed"
    nu: float | None = None
    gamma: np.ndarray | None = None
    cov_disp: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    dispersion_labels: list[str] = field(default_factory=list)
    score_norm: float = float("nan")
    loglik_change: float = float("nan")
    loglik_trace: list[float] = field(default_factory=list)

    @property
    def n_mean_params(self):
        return self.beta.shape[0]

    @property
    def n_params(self):
        if self.dispersion == "fixed":
            return self.n_mean_params
        if self.dispersion == "constant":
            return self.n_mean_params + 1
        return self.n_mean_params + self.gamma.shape[0]

    @property
    def gamma_or_nu(self):
        return self.nu if self.dispersion != "regression" else self.gamma

    @property
    def se_beta(self):
        return np.sqrt(np.diag(self.cov_beta))

    @property
    def se_disp(self):
        return np.sqrt(np.diag(self.cov_disp))

    @property
    def tvalues(self):
        return self.beta / self.se_beta


def _aic(loglik, n_params):
    return -2.0 * loglik + 2.0 * n_params


def _check_counts(y):
    y = np.asarray(y, dtype=float)
    if y.ndim != 1:
        raise ValueError("y must be a vector")
    if np.any(y < 0) or np.any(y != np.round(y)) or not np.all(np.isfinite(y)):
        raise ValueError("responses must be nonnegative integers")
    return y


# ---------------------------------------------------------------------------
# iid samples


def _iid_dispersion_equation(ybar, target):
    def f(log_nu):
        mom = dist.solve_rate_batch(ybar, math.exp(log_nu), tol=_SOLVE_TOL)[1]
        return mom.b[0] - target
    return f


def fit_iid(y):
    """MLE of ``(mu, nu)`` for an iid sample.

    The mean estimate is the sample mean.  The dispersion solves the
    moment-matching equation mean(log y_i!) = E[log Y!] at (ybar, nu), found
    by Brent's method on log(nu).
    """
    y = _check_counts(y)
    n = y.shape[0]
    if n < 2:
        raise ValueError("need at least two observations")
    ybar = float(y.mean())
    if np.all(y == y[0]):
        raise DegenerateData("all counts equal; dispersion diverges", mu_hat=ybar)

    target = float(gammaln(y + 1.0).mean())
    f = _iid_dispersion_equation(ybar, target)
    grid = np.log([1e-3, 1e-2, 0.1, 0.5, 1.0, 2.0, 5.0, 20.0, 100.0, dist.NU_MAX])
    values = [f(g) for g in grid]
    bracket = None
    for a, b, fa, fb in zip(grid[:-1], grid[1:], values[:-1], values[1:]):
        if fa == 0:
            bracket = (a, a)
            break
        if fa * fb < 0:
            bracket = (a, b)
            break
    if bracket is None:
        resid = min(values, key=abs)
        raise NoConvergence("no sign change for the dispersion equation", residual=resid)
    if bracket[0] == bracket[1]:
        log_nu = bracket[0]
    else:
        log_nu = optimize.brentq(f, *bracket, xtol=1e-14, rtol=1e-14, maxiter=200)
    nu = math.exp(log_nu)

    theta, mom = dist.solve_rate_batch(ybar, nu, tol=_SOLVE_TOL)
    lg = gammaln(y + 1.0)
    loglik = float(np.sum(y * theta[0] - nu * lg - mom.log_z[0]))
    v, a, c = mom.var[0], mom.a[0], mom.c[0]
    info_nu = c - a * a / v
    return FittedModel(
        beta=np.array([ybar]),
        cov_beta=np.array([[v / n]]),
        loglik=loglik,
        aic=_aic(loglik, 2),
        n_obs=n,
        converged=True,
        iterations=0,
        per_obs_mu=np.full(n, ybar),
        per_obs_nu=np.full(n, nu),
        per_obs_log_lambda=np.full(n, theta[0]),
        labels=["mu"],
        link="identity",
        dispersion="constant",
        nu=nu,
        cov_disp=np.array([[1.0 / (n * info_nu)]]),
        dispersion_labels=["nu"],
    )


# ---------------------------------------------------------------------------
# regression


@dataclass
class CountRegression:
    """Data and structure of one regression problem.

    ``Z`` is the dispersion design (``None`` for a constant dispersion),
    ``exposure`` multiplies the mean, ``fixed_nu`` pins the dispersion.
    """

    X: np.ndarray
    y: np.ndarray
    link: str = "log"
    Z: np.ndarray | None = None
    exposure: np.ndarray | None = None
    fixed_nu: float | None = None

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        if self.X.ndim == 1:
            self.X = self.X[:, None]
        self.y = _check_counts(self.y)
        n = self.y.shape[0]
        if self.X.shape[0] != n:
            raise ValueError("design and response lengths differ")
        if self.link not in ("log", "identity"):
            raise ValueError(f"unsupported link {self.link!r}")
        if self.exposure is None:
            self.exposure = np.ones(n)
        else:
            self.exposure = np.asarray(self.exposure, dtype=float)
            if self.exposure.shape != (n,) or np.any(~(self.exposure > 0)):
                raise ValueError("exposures must be strictly positive")
        self.constant_nu = self.Z is None
        self.Z = np.ones((n, 1)) if self.Z is None else np.asarray(self.Z, dtype=float)
        if self.Z.shape[0] != n:
            raise ValueError("dispersion design and response lengths differ")
        self.lgy = gammaln(self.y + 1.0)

    @property
    def n(self):
        return self.y.shape[0]

    def mean(self, beta):
        eta = self.X @ beta
        if self.link == "log":
            mu = self.exposure * np.exp(np.minimum(eta, 700.0))
            return mu, mu
        return self.exposure * eta, self.exposure.copy()

    def nu(self, gamma):
        if self.fixed_nu is not None:
            return np.full(self.n, float(self.fixed_nu))
        return np.exp(np.clip(self.Z @ gamma, -700.0, math.log(dist.NU_MAX)))


class _State:
    """Everything at one parameter point: means, rates, moments, loglik."""

    def __init__(self, prob, beta, gamma, theta0=None):
        self.beta = beta
        self.gamma = gamma
        self.mu, self.dmu = prob.mean(beta)
        self.nu = prob.nu(gamma)
        self.feasible = bool(np.all(self.mu > 0) and np.all(np.isfinite(self.mu))
                             and np.max(self.mu) <= MEAN_CAP)
        self.overflow = bool(np.max(self.mu) > MEAN_CAP) if self.mu.size else False
        if not self.feasible:
            self.loglik = -np.inf
            return
        self.theta, self.mom = dist.solve_rate_batch(self.mu, self.nu, theta0=theta0,
                                                     tol=_SOLVE_TOL)
        y = prob.y
        self.loglik_i = y * self.theta - self.nu * prob.lgy - self.mom.log_z
        self.loglik = float(np.sum(self.loglik_i))
        v, a = self.mom.var, self.mom.a
        self.resid = (y - self.mu) / v
        self.s_nu = a * self.resid - (prob.lgy - self.mom.b)
        self.w_beta = self.dmu ** 2 / v
        self.i_nu = self.mom.c - a * a / v
        self.score_beta = prob.X.T @ (self.resid * self.dmu)
        self.score_gamma = prob.Z.T @ (self.s_nu * self.nu)


def _poisson_start(prob):
    X, y, e = prob.X, prob.y, prob.exposure
    if prob.link == "log":
        eta = np.log((y + 0.5) / e)
        beta = np.linalg.lstsq(X, eta, rcond=None)[0]
        for _ in range(50):
            mu = e * np.exp(np.minimum(X @ beta, 700.0))
            z = X @ beta + (y - mu) / mu
            xw = X * mu[:, None]
            new = np.linalg.solve(X.T @ xw, xw.T @ z)
            if np.max(np.abs(new - beta)) < 1e-10 * (1 + np.max(np.abs(beta))):
                beta = new
                break
            beta = new
        return beta
    xe = X * e[:, None]
    beta = np.linalg.lstsq(xe, y, rcond=None)[0]
    if np.all(xe @ beta > 0):
        return beta
    if np.allclose(X[:, 0], 1.0):
        beta = np.zeros(X.shape[1])
        beta[0] = max(y.mean(), 0.5) / e.mean()
        return beta
    raise ValueError("identity link: could not find a start with positive means")


def _solve_info(info, rhs, what):
    cond = np.linalg.cond(info)
    if not np.isfinite(cond) or cond > COND_MAX:
        raise SingularInformation(f"{what} information is singular (cond={cond:.3g})")
    return np.linalg.solve(info, rhs)


def _line_search(prob, state, direction, which):
    """Step-halving along ``direction``; returns (state, overflowed_full_step)."""
    overflow = False
    step = 1.0
    for k in range(_MAX_HALVINGS):
        beta, gamma = state.beta, state.gamma
        if which == "beta":
            beta = beta + step * direction
        else:
            gamma = gamma + step * direction
        try:
            trial = _State(prob, beta, gamma, state.theta)
        except (TruncationLimit, NoConvergence):
            # series too long or rate unsolvable at the trial point: shorten
            step *= 0.5
            continue
        if k == 0 and trial.overflow:
            overflow = True
        if trial.feasible and trial.loglik >= state.loglik - 1e-12 * max(1.0, abs(state.loglik)):
            return trial, overflow
        step *= 0.5
    return state, overflow


def _check_rank(M, what):
    if M.shape[1] and np.linalg.matrix_rank(M) < M.shape[1]:
        raise RankDeficientDesign(f"{what} design is not of full column rank")


def fit_regression(prob, beta0=None, gamma0=None, grad_tol=GRAD_TOL,
                   max_iter=MAX_ITER, labels=None, dispersion_labels=None):
    """Fit a :class:`CountRegression` by alternating block Fisher scoring."""
    X, Z = prob.X, prob.Z
    _check_rank(X, "mean")
    fixed = prob.fixed_nu is not None
    if not fixed:
        _check_rank(Z, "dispersion")
    q = X.shape[1] + (0 if fixed else Z.shape[1])
    if prob.n <= q:
        raise RankDeficientDesign(f"n={prob.n} observations for {q} parameters")

    beta = _poisson_start(prob) if beta0 is None else np.asarray(beta0, dtype=float)
    gamma = np.zeros(Z.shape[1]) if gamma0 is None else np.asarray(gamma0, dtype=float)
    state = _State(prob, beta, gamma)
    if not state.feasible:
        if state.overflow:
            raise MeanOverflow("starting values give means above the cap")
        raise ValueError("starting values give nonpositive means")

    trace = [state.loglik]
    converged = False
    overflow = False
    change = float("nan")
    it = 0
    for it in range(1, max_iter + 1):
        prev = state.loglik
        direction = _solve_info(X.T @ (X * state.w_beta[:, None]), state.score_beta, "mean")
        state, overflow = _line_search(prob, state, direction, "beta")
        if not fixed:
            info = Z.T @ (Z * (state.i_nu * state.nu ** 2)[:, None])
            direction = _solve_info(info, state.score_gamma, "dispersion")
            state, over_g = _line_search(prob, state, direction, "gamma")
            overflow = overflow or over_g
        trace.append(state.loglik)
        change = abs(state.loglik - prev) / max(1.0, abs(state.loglik))
        if _score_norm(state, fixed) < grad_tol and change < LOGLIK_RTOL:
            converged = True
            break

    if not converged and overflow:
        raise MeanOverflow("fitted means exceed the cap; the fit appears to diverge")
    if not converged:
        log.warning("fit did not converge in %d iterations (score norm %.3g)",
                    it, _score_norm(state, fixed))
    return _finish(prob, state, converged, it, change, trace, labels, dispersion_labels)


def _score_norm(state, fixed):
    parts = [np.abs(state.score_beta)]
    if not fixed:
        parts.append(np.abs(state.score_gamma))
    return float(np.max(np.concatenate(parts)))


def _finish(prob, state, converged, iterations, change, trace, labels, dlabels):
    X, Z = prob.X, prob.Z
    fixed = prob.fixed_nu is not None
    cov_beta = np.linalg.inv(_check_cond(X.T @ (X * state.w_beta[:, None]), "mean"))
    if fixed:
        dispersion, nu, gamma, cov_disp = "fixed", float(prob.fixed_nu), None, np.zeros((0, 0))
        dlabels = []
    elif prob.constant_nu:
        dispersion = "constant"
        nu = float(state.nu[0])
        gamma = None
        cov_disp = np.array([[1.0 / _check_cond(np.array([[state.i_nu.sum()]]), "dispersion")[0, 0]]])
        dlabels = ["nu"]
    else:
        dispersion, nu, gamma = "regression", None, state.gamma.copy()
        info = Z.T @ (Z * (state.i_nu * state.nu ** 2)[:, None])
        cov_disp = np.linalg.inv(_check_cond(info, "dispersion"))
        dlabels = dlabels or [f"z{j}" for j in range(Z.shape[1])]
    model = FittedModel(
        beta=state.beta.copy(),
        cov_beta=cov_beta,
        loglik=state.loglik,
        aic=0.0,
        n_obs=prob.n,
        converged=converged,
        iterations=iterations,
        per_obs_mu=state.mu.copy(),
        per_obs_nu=state.nu.copy(),
        per_obs_log_lambda=state.theta.copy(),
        labels=labels or [f"x{j}" for j in range(X.shape[1])],
        link=prob.link,
        dispersion=dispersion,
        nu=nu,
        gamma=gamma,
        cov_disp=cov_disp,
        dispersion_labels=dlabels,
        score_norm=_score_norm(state, fixed),
        loglik_change=change,
        loglik_trace=trace,
    )
    model.aic = _aic(model.loglik, model.n_params)
    return model


def _check_cond(info, what):
    cond = np.linalg.cond(info)
    if not np.isfinite(cond) or cond > COND_MAX or np.any(np.diag(info) <= 0):
        raise SingularInformation(f"{what} information is singular (cond={cond:.3g})")
    return info


def _matrix(design):
    if isinstance(design, DesignMatrix):
        return design.matrix, list(design.labels)
    m = np.asarray(design, dtype=float)
    if m.ndim == 1:
        m = m[:, None]
    return m, None


def fit_glm(spec, design, y, dispersion_design=None, exposure=None, **options):
    """Fit the regression described by ``spec`` to a prepared design.

    ``design`` and ``dispersion_design`` may be :class:`DesignMatrix` objects
    or plain arrays; ``exposure`` is the multiplicative offset on the mean.
    ``options`` are passed to :func:`fit_regression`.
    """
    X, labels = _matrix(design)
    Z, dlabels = (None, None) if dispersion_design is None else _matrix(dispersion_design)
    prob = CountRegression(X, y, link=spec.link, Z=Z, exposure=exposure,
                           fixed_nu=spec.fixed_nu)
    return fit_regression(prob, labels=labels, dispersion_labels=dlabels, **options)


def prepare(spec, data):
    """Design matrices, response and exposure for ``spec`` over a dataset.

    Rows missing any used column are dropped.  Returns
    ``(design, dispersion_design_or_None, y, exposure_or_None, n_dropped)``.
    """
    design_vars = [spec.response]
    for text in (spec.mean_terms, spec.dispersion_terms or ""):
        design_vars += parse_formula(text).variables
    if spec.offset:
        design_vars.append(spec.offset)
    for name in design_vars:
        data[name]  # raises UnknownVariable
    data, dropped = data.dropna(design_vars)
    if not data.is_numeric(spec.response):
        raise ValueError(f"response {spec.response!r} is not numeric")
    y = data[spec.response]
    design = build_design(data, spec.mean_terms)
    ddesign = build_design(data, spec.dispersion_terms) if spec.dispersion_terms else None
    exposure = None
    if spec.offset:
        if not data.is_numeric(spec.offset):
            raise ValueError(f"offset {spec.offset!r} is not numeric")
        exposure = data[spec.offset]
    return design, ddesign, y, exposure, dropped


def fit_model(spec, data, **options):
    """Build designs from ``data`` and fit ``spec``."""
    design, ddesign, y, exposure, _ = prepare(spec, data)
    return fit_glm(spec, design, y, dispersion_design=ddesign, exposure=exposure, **options)


# ---------------------------------------------------------------------------
# scores and information at arbitrary parameter points


def _problem_state(prob, beta, nu=None, gamma=None):
    if prob.fixed_nu is not None:
        g = np.zeros(prob.Z.shape[1])
    elif prob.constant_nu:
        if nu is None:
            raise ValueError("constant-dispersion problems need nu")
        g = np.array([math.log(nu)])
    else:
        if gamma is None:
            raise ValueError("dispersion regression needs gamma")
        g = np.asarray(gamma, dtype=float)
    state = _State(prob, np.asarray(beta, dtype=float), g)
    if not state.feasible:
        raise ValueError("parameters give invalid means")
    return state


def loglik(prob, beta, nu=None, gamma=None):
    """Total log-likelihood at ``(beta, nu)`` or ``(beta, gamma)``."""
    return _problem_state(prob, beta, nu, gamma).loglik


def score_vector(prob, beta, nu=None, gamma=None):
    """Stacked score: mean block, then the dispersion block.

    The dispersion block is d/d(nu) for a constant dispersion and d/d(gamma)
    for a dispersion regression; it is absent when the dispersion is fixed.
    """
    s = _problem_state(prob, beta, nu, gamma)
    if prob.fixed_nu is not None:
        return s.score_beta.copy()
    if prob.constant_nu:
        return np.concatenate([s.score_beta, [s.s_nu.sum()]])
    return np.concatenate([s.score_beta, s.score_gamma])


def fisher_blocks(prob, beta, nu=None, gamma=None):
    """Per-observation expected information blocks ``(W1_inv, W2_inv)``.

    W1_inv = mean of mu'(eta)^2 x x^T / V.  For a constant dispersion
    W2_inv = mean of Var(S_nu) = C - A^2/V; for a dispersion regression the
    same weight times nu'(eta~)^2 z z^T.
    """
    s = _problem_state(prob, beta, nu, gamma)
    n = prob.n
    w1 = _check_cond(prob.X.T @ (prob.X * s.w_beta[:, None]) / n, "mean")
    if prob.fixed_nu is not None:
        return w1, np.zeros((0, 0))
    if prob.constant_nu:
        w2 = np.array([[s.i_nu.mean()]])
    else:
        w2 = prob.Z.T @ (prob.Z * (s.i_nu * s.nu ** 2)[:, None]) / n
    return w1, _check_cond(w2, "dispersion")
