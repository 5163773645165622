"""Mean-parametrized Conway-Maxwell-Poisson distribution.

All series are evaluated in log space over a finite window ``[lower, upper]``
of the support.  The window is grown until the neglected mass on either side
is bounded, via a geometric-ratio argument, by ``tail_tol`` times the summed
mass.  Both the scalar API (:class:`CmpParams` and the functions taking it)
and the batched helpers used by the regression code share that window rule.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln, logsumexp

from .errors import DivergentSeries, NoConvergence, TruncationLimit

__all__ = [
    "CmpParams",
    "MomentFunctionals",
    "RateMoments",
    "approx_mean",
    "cdf",
    "evaluate_rate",
    "log_normalizer",
    "log_pmf",
    "mean_from_rate",
    "moment_functionals",
    "pmf",
    "quantile",
    "raw_moment",
    "sample",
    "solve_rate",
    "solve_rate_batch",
]

TAIL_TOL = 1e-12
MAX_TERMS = 10**6
SOLVE_TOL = 1e-10
MAX_ITER = 200
NU_MAX = 1e3
# rows per block in batched evaluation, and a cap on rows x window cells
_CHUNK = 256
_MAX_CELLS = 1 << 22


class _Split(Exception):
    """A block's window grew past the cell budget; retry with fewer rows."""


def _check_divergence(theta, nu):
    bad = (nu == 0) & (theta >= 0)
    if np.any(bad):
        raise DivergentSeries("series diverges for nu = 0 and rate >= 1")


def _initial_window(theta, nu, from_zero):
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        log_mode = np.where(nu > 0, theta / np.where(nu > 0, nu, 1.0), -np.inf)
    mode = np.where(log_mode > 0, np.exp(np.minimum(log_mode, 700.0)), 0.0)
    spread = np.sqrt((mode + 1.0) / np.maximum(nu, 0.01))
    lo = 0.0 if from_zero else max(0.0, float(np.min(mode - 12.0 * spread - 10.0)))
    hi = float(np.max(mode + 12.0 * spread + 30.0))
    return math.floor(lo), hi


def _log_terms(y, lg, theta, nu):
    with np.errstate(invalid="ignore"):
        lt = y * theta[:, None] - nu[:, None] * lg
    if y[0] == 0:
        # 0 * -inf for the point mass at zero
        lt[:, 0] = 0.0
    return lt


def _window_terms(theta, nu, tail_tol, max_terms, from_zero=False, max_cells=None):
    """Return ``(y, lg, log_terms, log_z)`` over a window meeting the tail rule.

    With ``max_cells`` set, raises :class:`_Split` instead of building a
    multi-row matrix with more cells than that.
    """
    lo, hi_f = _initial_window(theta, nu, from_zero)
    if hi_f - lo + 1 > max_terms:
        raise TruncationLimit(
            f"summation window of {hi_f - lo + 1:.3g} terms exceeds cap {max_terms}"
        )
    hi = math.ceil(hi_f)
    log_tol = math.log(tail_tol)
    point_mass = np.isneginf(theta)
    while True:
        if hi - lo + 1 > max_terms:
            raise TruncationLimit(
                f"summation window of {hi - lo + 1} terms exceeds cap {max_terms}"
            )
        if max_cells and theta.shape[0] > 1 and theta.shape[0] * (hi - lo + 1) > max_cells:
            raise _Split
        y = np.arange(lo, hi + 1, dtype=float)
        lg = gammaln(y + 1.0)
        lt = _log_terms(y, lg, theta, nu)
        log_z = logsumexp(lt, axis=1)

        # ratio of term hi+1 to term hi; ratios shrink further out
        with np.errstate(invalid="ignore", divide="ignore"):
            log_r = theta - nu * math.log(hi + 1.0)
            tail = lt[:, -1] + log_r - np.log(-np.expm1(log_r))
        ok_right = point_mass | ((log_r < 0) & (tail < log_tol + log_z))

        ok_left = np.ones_like(ok_right)
        if lo > 0:
            with np.errstate(invalid="ignore", divide="ignore"):
                log_rho = nu * math.log(lo) - theta
                tail = lt[:, 0] + log_rho - np.log(-np.expm1(log_rho))
            ok_left = (log_rho < 0) & (tail < log_tol + log_z)

        if ok_right.all() and ok_left.all():
            return y, lg, lt, log_z
        width = hi - lo + 1
        if not ok_right.all():
            hi += width
        if not ok_left.all():
            lo = max(0, lo - width)


@dataclass(frozen=True)
class RateMoments:
    """Batched series summaries at given ``(log_lambda, nu)`` rows.

    ``a`` is Cov(log Y!, Y), ``b`` is E[log Y!] and ``c`` is Var(log Y!).
    """

    log_z: np.ndarray
    mean: np.ndarray
    var: np.ndarray
    a: np.ndarray
    b: np.ndarray
    c: np.ndarray


def _summaries(y, lg, lt, log_z):
    p = np.exp(lt - log_z[:, None])
    mean = p @ y
    dy = y[None, :] - mean[:, None]
    var = np.einsum("ij,ij->i", p, dy * dy)
    b = p @ lg
    dl = lg[None, :] - b[:, None]
    a = np.einsum("ij,ij->i", p, dy * dl)
    c = np.einsum("ij,ij->i", p, dl * dl)
    return mean, var, a, b, c


def _blocks(theta, nu):
    """Yield index blocks of rows with similar modes."""
    with np.errstate(divide="ignore", invalid="ignore"):
        key = np.where(nu > 0, theta / np.where(nu > 0, nu, 1.0), theta)
    order = np.argsort(key, kind="stable")
    for start in range(0, len(order), _CHUNK):
        yield order[start:start + _CHUNK]


def _windows(theta, nu, tail_tol, max_terms, from_zero=False):
    """Yield ``(idx, y, lg, log_terms, log_z)`` per block, halving oversized blocks."""
    pending = list(_blocks(theta, nu))[::-1]
    while pending:
        idx = pending.pop()
        try:
            terms = _window_terms(theta[idx], nu[idx], tail_tol, max_terms,
                                  from_zero=from_zero, max_cells=_MAX_CELLS)
        except _Split:
            half = len(idx) // 2
            pending += [idx[half:], idx[:half]]
            continue
        yield (idx, *terms)


def evaluate_rate(log_lambda, nu, tail_tol=TAIL_TOL, max_terms=MAX_TERMS):
    """Series summaries for arrays of ``(log_lambda, nu)``; see :class:`RateMoments`."""
    theta = np.atleast_1d(np.asarray(log_lambda, dtype=float))
    nu = np.broadcast_to(np.asarray(nu, dtype=float), theta.shape).copy()
    theta = theta.copy()
    _check_divergence(theta, nu)
    out = {k: np.empty(theta.shape) for k in ("log_z", "mean", "var", "a", "b", "c")}
    for idx, y, lg, lt, log_z in _windows(theta, nu, tail_tol, max_terms):
        mean, var, a, b, c = _summaries(y, lg, lt, log_z)
        out["log_z"][idx] = log_z
        out["mean"][idx] = mean
        out["var"][idx] = var
        out["a"][idx] = a
        out["b"][idx] = b
        out["c"][idx] = c
    return RateMoments(**out)


def _seed(mu, nu):
    shift = np.where(nu > 0, (nu - 1.0) / (2.0 * np.where(nu > 0, nu, 1.0)), 0.0)
    arg = np.maximum(mu + np.maximum(shift, 0.0), 1e-4)
    return nu * np.log(arg)


def solve_rate_batch(mu, nu, theta0=None, tol=SOLVE_TOL, max_iter=MAX_ITER,
                     tail_tol=TAIL_TOL, max_terms=MAX_TERMS):
    """Solve the mean equation for ``log_lambda`` row by row.

    Safeguarded Newton on ``log_lambda`` using d(mean)/d(log_lambda) = variance.
    Every iterate that undershoots (overshoots) the target becomes a lower
    (upper) bracket; steps leaving the bracket are replaced by bisection.

    Returns ``(log_lambda, RateMoments)`` with the moments evaluated at the
    returned rates.
    """
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    nu = np.broadcast_to(np.asarray(nu, dtype=float), mu.shape).copy()
    if np.any(mu < 0) or np.any(nu < 0) or not np.all(np.isfinite(mu)):
        raise ValueError("mu and nu must be finite and nonnegative")
    n = mu.shape[0]
    theta = np.empty(n)
    res = {k: np.zeros(n) for k in ("log_z", "mean", "var", "a", "b", "c")}

    zero = mu == 0
    geom = (nu == 0) & ~zero
    theta[zero] = -np.inf
    if geom.any():
        theta[geom] = np.log(mu[geom]) - np.log1p(mu[geom])
        ev = evaluate_rate(theta[geom], 0.0, tail_tol, max_terms)
        for k in res:
            res[k][geom] = getattr(ev, k)
    active = ~(zero | geom)

    if theta0 is None:
        theta[active] = _seed(mu[active], nu[active])
    else:
        t0 = np.broadcast_to(np.asarray(theta0, dtype=float), mu.shape)
        good = active & np.isfinite(t0)
        theta[good] = t0[good]
        rest = active & ~good
        theta[rest] = _seed(mu[rest], nu[rest])

    lo = np.full(n, -np.inf)
    hi = np.full(n, np.inf)
    step_up = 2.0 * np.maximum(nu, 0.05)
    residual = np.zeros(n)
    for _ in range(max_iter):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        ev = evaluate_rate(theta[idx], nu[idx], tail_tol, max_terms)
        f = ev.mean - mu[idx]
        residual[idx] = f
        done = np.abs(f) <= tol * np.maximum(1.0, mu[idx])
        fin = idx[done]
        for k in res:
            res[k][fin] = getattr(ev, k)[done]
        active[fin] = False

        todo = ~done
        idx, f, v = idx[todo], f[todo], ev.var[todo]
        t = theta[idx]
        lo[idx] = np.where(f < 0, t, lo[idx])
        hi[idx] = np.where(f > 0, t, hi[idx])
        with np.errstate(divide="ignore", invalid="ignore"):
            step = -f / v
        step = np.where(np.isfinite(step), step, np.where(f < 0, step_up[idx], -1.0))
        step = np.clip(step, -10.0, step_up[idx])
        new = t + step
        outside = (new <= lo[idx]) | (new >= hi[idx])
        both = np.isfinite(lo[idx]) & np.isfinite(hi[idx])
        new = np.where(outside & both, 0.5 * (lo[idx] + hi[idx]), new)
        theta[idx] = new

    if active.any():
        worst = float(np.max(np.abs(residual[active])))
        raise NoConvergence(
            f"rate solver did not converge in {max_iter} iterations "
            f"(max residual {worst:.3g})",
            residual=worst,
        )
    return theta, RateMoments(**res)


def _clamp_nu(nu):
    if nu > NU_MAX:
        warnings.warn(f"nu={nu:g} clamped to {NU_MAX:g}", RuntimeWarning, stacklevel=3)
        return NU_MAX
    return nu


def log_normalizer(log_lambda, nu, tail_tol=TAIL_TOL, max_terms=MAX_TERMS):
    """Log of the normalizing series at rate ``exp(log_lambda)``.

    Returns ``(log_z, truncation)`` where ``truncation`` is the last index
    summed.
    """
    theta = np.array([float(log_lambda)])
    nu_a = np.array([float(nu)])
    _check_divergence(theta, nu_a)
    y, _, _, log_z = _window_terms(theta, nu_a, tail_tol, max_terms)
    return float(log_z[0]), int(y[-1])


def mean_from_rate(log_lambda, nu, tail_tol=TAIL_TOL, max_terms=MAX_TERMS):
    return float(evaluate_rate(float(log_lambda), float(nu), tail_tol, max_terms).mean[0])


def solve_rate(mu, nu, tol=SOLVE_TOL, max_iter=MAX_ITER, tail_tol=TAIL_TOL,
               max_terms=MAX_TERMS):
    """``log_lambda`` whose distribution has mean ``mu`` at dispersion ``nu``.

    ``mu = 0`` gives ``-inf`` (point mass at zero); ``nu = 0`` uses the
    geometric closed form ``lambda = mu / (mu + 1)``.
    """
    theta, _ = solve_rate_batch(mu, _clamp_nu(float(nu)), tol=tol, max_iter=max_iter,
                                tail_tol=tail_tol, max_terms=max_terms)
    return float(theta[0])


def approx_mean(log_lambda, nu):
    """Closed-form mean approximation ``lambda**(1/nu) - (nu - 1)/(2 nu)``."""
    if nu <= 0:
        raise ValueError("nu must be positive")
    return math.exp(log_lambda / nu) - (nu - 1.0) / (2.0 * nu)


@dataclass(frozen=True)
class CmpParams:
    """A solved ``(mu, nu)`` pair.

    Build with :meth:`from_mean`.  ``lower`` and ``truncation`` delimit the
    summation window; mass outside it is below ``tail_tol``.
    """

    mu: float
    nu: float
    log_lambda: float
    log_z: float
    truncation: int
    lower: int = 0
    tail_tol: float = TAIL_TOL

    @classmethod
    def from_mean(cls, mu, nu, tol=SOLVE_TOL, tail_tol=TAIL_TOL, max_terms=MAX_TERMS):
        mu = float(mu)
        nu = float(nu)
        if mu < 0 or nu < 0 or not math.isfinite(mu):
            raise ValueError(f"invalid parameters mu={mu}, nu={nu}")
        nu = _clamp_nu(nu)
        if mu == 0:
            return cls(mu, nu, -math.inf, 0.0, 0, 0, tail_tol)
        theta = solve_rate(mu, nu, tol=tol, tail_tol=tail_tol, max_terms=max_terms)
        t, n = np.array([theta]), np.array([nu])
        y, _, _, log_z = _window_terms(t, n, tail_tol, max_terms)
        return cls(mu, nu, theta, float(log_z[0]), int(y[-1]), int(y[0]), tail_tol)

    @property
    def support(self):
        """Integer window ``lower..truncation`` as an array."""
        return np.arange(self.lower, self.truncation + 1)

    def _log_weights(self, y):
        y = np.asarray(y, dtype=float)
        if self.mu == 0:
            return np.where(y == 0, 0.0, -np.inf)
        return y * self.log_lambda - self.nu * gammaln(y + 1.0) - self.log_z


@dataclass(frozen=True)
class MomentFunctionals:
    """Variance and log-factorial functionals at one ``(mu, nu)``.

    ``a_val`` = E[log(Y!)(Y - mu)], ``b_val`` = E[log Y!],
    ``c_val`` = Var(log Y!).
    """

    variance: float
    a_val: float
    b_val: float
    c_val: float


def log_pmf(y, params):
    y = np.asarray(y)
    if np.any(y < 0):
        raise ValueError("counts must be nonnegative")
    out = params._log_weights(y)
    return float(out) if out.ndim == 0 else out


def pmf(y, params):
    return np.exp(log_pmf(y, params))


def _window_pmf(params):
    ys = params.support
    return ys, np.exp(params._log_weights(ys))


def cdf(y, params):
    """P(Y <= y); vectorized over ``y``."""
    y_arr = np.asarray(y)
    scalar = y_arr.ndim == 0
    y_arr = np.atleast_1d(y_arr).astype(np.int64)
    ys, p = _window_pmf(params)
    cum = np.cumsum(p)
    out = np.empty(y_arr.shape, dtype=float)
    for i, yi in enumerate(y_arr):
        if yi < 0:
            out[i] = 0.0
        elif yi < params.lower:
            out[i] = float(np.exp(logsumexp(params._log_weights(np.arange(yi + 1)))))
        elif yi >= params.truncation:
            out[i] = min(1.0, cum[-1])
        else:
            out[i] = min(1.0, cum[yi - params.lower])
    return float(out[0]) if scalar else out


def quantile(p, params):
    """Smallest y with cdf(y) >= p."""
    p_arr = np.asarray(p, dtype=float)
    if np.any((p_arr < 0) | (p_arr >= 1)):
        raise ValueError("p must lie in [0, 1)")
    ys, w = _window_pmf(params)
    cum = np.cumsum(w)
    pos = np.searchsorted(cum, p_arr, side="left")
    out = np.where(p_arr == 0, 0, ys[np.minimum(pos, len(ys) - 1)])
    return int(out) if out.ndim == 0 else out.astype(np.int64)


def moment_functionals(params):
    if params.mu == 0:
        return MomentFunctionals(0.0, 0.0, 0.0, 0.0)
    ys, p = _window_pmf(params)
    y = ys.astype(float)
    lg = gammaln(y + 1.0)
    # centre on the realized mean so A is a covariance even at solver tolerance
    d = y - float(p @ y)
    b = float(p @ lg)
    return MomentFunctionals(
        variance=float(p @ (d * d)),
        a_val=float(p @ (lg * d)),
        b_val=b,
        c_val=float(p @ ((lg - b) ** 2)),
    )


def raw_moment(r, params):
    """E[Y**r] by truncated summation."""
    if r < 1:
        raise ValueError("r must be a positive integer")
    ys, p = _window_pmf(params)
    return float(p @ ys.astype(float) ** r)


def _raw_moment_at_rate(r, log_lambda, nu, tail_tol=TAIL_TOL, max_terms=MAX_TERMS):
    theta = np.array([float(log_lambda)])
    y, _, lt, log_z = _window_terms(theta, np.array([float(nu)]), tail_tol, max_terms)
    p = np.exp(lt[0] - log_z[0])
    return float(p @ y ** r)


def sample(params, n, seed):
    """``n`` iid draws by inversion of the cdf, reproducible from ``seed``."""
    if n < 1:
        raise ValueError("n must be positive")
    rng = np.random.default_rng(seed)
    return _invert(params, rng.random(n))


def _invert(params, u):
    ys, w = _window_pmf(params)
    cum = np.cumsum(w)
    pos = np.searchsorted(cum, u, side="left")
    return ys[np.minimum(pos, len(ys) - 1)].astype(np.int64)


# ---------------------------------------------------------------------------
# batched pmf / cdf / sampling over rows with their own (mu, nu)


def _row_tables(log_lambda, nu, tail_tol=TAIL_TOL, max_terms=MAX_TERMS):
    """Yield ``(idx, y, log_p)`` blocks with windows starting at zero."""
    theta = np.asarray(log_lambda, dtype=float)
    nu = np.broadcast_to(np.asarray(nu, dtype=float), theta.shape)
    for idx, y, _, lt, log_z in _windows(theta, nu, tail_tol, max_terms, from_zero=True):
        yield idx, y, lt - log_z[:, None]


def pit_components(y, log_lambda, nu, tail_tol=TAIL_TOL, max_terms=MAX_TERMS):
    """Per-row ``(cdf(y - 1), pmf(y))`` for counts ``y``."""
    y = np.asarray(y, dtype=np.int64)
    below = np.zeros(y.shape)
    at = np.zeros(y.shape)
    for idx, grid, logp in _row_tables(log_lambda, nu, tail_tol, max_terms):
        p = np.exp(logp)
        cum = np.cumsum(p, axis=1)
        yi = y[idx]
        inside = yi <= grid[-1]
        rows = np.arange(len(idx))
        col = np.minimum(yi, len(grid) - 1)
        at[idx] = np.where(inside, p[rows, col], 0.0)
        prev = np.where(yi > 0, cum[rows, np.maximum(col - 1, 0)], 0.0)
        below[idx] = np.where(inside, prev, np.minimum(cum[:, -1], 1.0))
    return np.minimum(below, 1.0), at


def sample_rows(log_lambda, nu, rng, tail_tol=TAIL_TOL, max_terms=MAX_TERMS):
    """One draw per row by inversion using uniforms from ``rng``."""
    theta = np.asarray(log_lambda, dtype=float)
    u = rng.random(theta.shape[0])
    out = np.empty(theta.shape[0], dtype=np.int64)
    for idx, grid, logp in _row_tables(theta, nu, tail_tol, max_terms):
        cum = np.cumsum(np.exp(logp), axis=1)
        pos = (cum < u[idx, None]).sum(axis=1)
        out[idx] = grid[np.minimum(pos, len(grid) - 1)].astype(np.int64)
    return out
