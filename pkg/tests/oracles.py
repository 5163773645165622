"""Independent reference computations used by the tests.

Nothing here imports the package: sums run from y = 0 to a fixed high
truncation with plain ``math`` functions, and the Poisson oracle is a
textbook IRLS loop.
"""

import math

import numpy as np


def log_weights(log_lam, nu, T):
    return [y * log_lam - nu * math.lgamma(y + 1) for y in range(T + 1)]


def brute(log_lam, nu, T=10_000):
    """(log Z, probabilities over 0..T) by direct summation."""
    lw = log_weights(log_lam, nu, T)
    m = max(lw)
    z = math.fsum(math.exp(v - m) for v in lw)
    log_z = m + math.log(z)
    return log_z, np.array([math.exp(v - log_z) for v in lw])


def brute_moments(log_lam, nu, T=10_000):
    """Mean, variance and the log y! functionals A, B, C by direct summation."""
    _, p = brute(log_lam, nu, T)
    y = np.arange(T + 1, dtype=float)
    lg = np.array([math.lgamma(k + 1) for k in range(T + 1)])
    mean = math.fsum(p * y)
    var = math.fsum(p * (y - mean) ** 2)
    b = math.fsum(p * lg)
    a = math.fsum(p * (y - mean) * (lg - b))
    c = math.fsum(p * (lg - b) ** 2)
    return {"mean": mean, "var": var, "a": a, "b": b, "c": c, "p": p, "y": y, "lg": lg}


def brute_rate(mu, nu, T=10_000, lo=-50.0, hi=50.0):
    """log(lambda) with brute-force mean equal to ``mu``, by bisection."""
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if brute_moments(mid, nu, T)["mean"] < mu:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-15:
            break
    return 0.5 * (lo + hi)


def poisson_irls(X, y, offset=None, tol=1e-13, max_iter=100):
    """Log-link Poisson GLM by iteratively reweighted least squares."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    off = np.zeros(len(y)) if offset is None else np.asarray(offset, dtype=float)
    mu = y + 0.5
    eta = np.log(mu) - off
    beta = np.zeros(X.shape[1])
    for _ in range(max_iter):
        z = eta + (y - mu) / mu
        w = mu
        xtw = X.T * w
        new = np.linalg.solve(xtw @ X, xtw @ z)
        done = np.max(np.abs(new - beta)) < tol
        beta = new
        eta = X @ beta
        mu = np.exp(eta + off)
        if done:
            break
    return beta
