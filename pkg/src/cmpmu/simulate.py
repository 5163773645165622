"""Replicated simulation studies with covariate resampling.

Each replicate ``k`` draws its own generator ``default_rng(base_seed + k)``:
covariate rows are resampled with replacement, responses are drawn from the
generating model, the full and restricted models are fitted and the
likelihood-ratio p-value is compared with every nominal level.  Replicates
whose fits fail or do not converge are excluded and counted.
"""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import distribution as dist
from .data import Dataset, load_csv
from .errors import CmpError, GeneratorMisspecified, MeanOverflow
from .fit import CountRegression, fit_regression
from .formula import build_design, parse_formula
from .inference import lrt_composite, lrt_poisson

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Generator:
    """True model used to draw responses."""

    terms: str
    beta: tuple[float, ...]
    family: str = "cmp_mu"
    nu: float = 1.0
    link: str = "log"

    def __post_init__(self):
        if self.family not in ("cmp_mu", "poisson"):
            raise GeneratorMisspecified(f"unknown family {self.family!r}")
        if self.family == "poisson" and self.nu != 1.0:
            raise GeneratorMisspecified("poisson generator requires nu = 1")
        if not self.nu > 0:
            raise GeneratorMisspecified("nu must be positive")
        if self.link not in ("log", "identity"):
            raise GeneratorMisspecified(f"unknown link {self.link!r}")


def _means(generator, X):
    beta = np.asarray(generator.beta, dtype=float)
    if beta.shape[0] != X.shape[1]:
        raise GeneratorMisspecified(
            f"generator has {beta.shape[0]} coefficients for {X.shape[1]} design columns"
        )
    eta = X @ beta
    mu = np.exp(eta) if generator.link == "log" else eta
    if not np.all(np.isfinite(mu)) or np.any(mu > 1e6):
        raise MeanOverflow("generating means are not finite or exceed the cap")
    if np.any(mu < 0):
        raise GeneratorMisspecified("generating means must be nonnegative")
    return mu


def draw_responses(generator, X, rng):
    """One response per design row."""
    mu = _means(generator, X)
    theta, _ = dist.solve_rate_batch(mu, generator.nu)
    return dist.sample_rows(theta, generator.nu, rng)


def simulate_dataset(generator, data, seed, n=None):
    """Draw ``(design, y)``.

    With ``n`` set, ``n`` covariate rows are first resampled with
    replacement from ``data``; otherwise every row is used once.
    """
    rng = np.random.default_rng(seed)
    design = build_design(data, generator.terms)
    if n is not None:
        design = design.take(rng.integers(0, data.n_rows, size=n))
    return design, draw_responses(generator, design.matrix, rng)


@dataclass(frozen=True)
class StudyConfig:
    generator: Generator
    covariate_source: Dataset
    full_terms: str
    restricted_terms: str = ""
    n_per_dataset: int = 100
    n_replicates: int = 500
    nominal_levels: tuple[float, ...] = (0.01, 0.05, 0.10)
    base_seed: int = 0
    test: str = "composite"  # or "poisson" (nu = 1 within the full model)
    f_calibrate: bool = True

    def __post_init__(self):
        if self.test not in ("composite", "poisson"):
            raise ValueError(f"unknown test {self.test!r}")
        q = build_design(self.covariate_source, self.full_terms).shape[1]
        if self.n_per_dataset < q + 2:
            raise ValueError(f"n_per_dataset must be at least {q + 2}")
        if any(not 0 < a < 1 for a in self.nominal_levels):
            raise ValueError("nominal levels must lie in (0, 1)")


@dataclass
class StudyResult:
    levels: np.ndarray
    rejections: np.ndarray
    n_valid: int
    n_failed: int
    pvalues: np.ndarray = field(repr=False)

    @property
    def rates(self):
        return self.rejections / max(self.n_valid, 1)

    @property
    def standard_errors(self):
        p = self.rates
        return np.sqrt(p * (1 - p) / max(self.n_valid, 1))

    def table(self):
        return [
            {"level": float(a), "rejections": int(r), "valid": self.n_valid,
             "failed": self.n_failed, "rate": float(p), "se": float(s)}
            for a, r, p, s in zip(self.levels, self.rejections, self.rates,
                                  self.standard_errors)
        ]


def _replicate(args):
    config, designs, k = args
    gen_X, full_X, restr_X = designs
    rng = np.random.default_rng(config.base_seed + k)
    rows = rng.integers(0, gen_X.shape[0], size=config.n_per_dataset)
    y = draw_responses(config.generator, gen_X[rows], rng)
    try:
        full = fit_regression(CountRegression(full_X[rows], y))
        if config.test == "poisson":
            other = fit_regression(CountRegression(full_X[rows], y, fixed_nu=1.0))
            if not (full.converged and other.converged):
                return math.nan
            return lrt_poisson(full, other).p_chi2
        r = full_X.shape[1] - restr_X.shape[1]
        if r == 0:
            return 1.0 if full.converged else math.nan
        restricted = fit_regression(CountRegression(restr_X[rows], y))
        if not (full.converged and restricted.converged):
            return math.nan
        res = lrt_composite(full, restricted, r, f_calibrate=config.f_calibrate)
        return res.p_f if config.f_calibrate else res.p_chi2
    except (CmpError, np.linalg.LinAlgError) as exc:
        log.info("replicate %d failed: %s", k, exc)
        return math.nan


def run_study(config, n_jobs=1):
    """Empirical rejection rates of the configured test.

    Deterministic given ``config``: results do not depend on ``n_jobs``.
    """
    src = config.covariate_source
    gen_X = build_design(src, config.generator.terms).matrix
    full = build_design(src, config.full_terms)
    restr = build_design(src, config.restricted_terms, levels=full.levels)
    if config.test == "composite" and not set(restr.labels) <= set(full.labels):
        raise ValueError("restricted model is not nested in the full model")
    _means(config.generator, gen_X)
    designs = (gen_X, full.matrix, restr.matrix)
    jobs = [(config, designs, k) for k in range(config.n_replicates)]
    if n_jobs == 1:
        pvals = [_replicate(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            pvals = list(pool.map(_replicate, jobs, chunksize=8))
    pvals = np.array(pvals, dtype=float)
    valid = ~np.isnan(pvals)
    levels = np.asarray(config.nominal_levels, dtype=float)
    rejections = np.array([(pvals[valid] < a).sum() for a in levels])
    return StudyResult(levels, rejections, int(valid.sum()), int((~valid).sum()), pvals)


def _floats(text):
    return tuple(float(v) for v in text.replace(",", " ").split())


def read_study_config(path):
    """Parse a ``key = value`` study file (``#`` starts a comment).

    Keys: data, generator_terms, beta, family, nu, link, full_terms,
    restricted_terms, n, replicates, levels, seed, test, f_calibrate.
    Relative ``data`` paths resolve against the config file's directory.
    """
    entries = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key = value")
            key, value = (s.strip() for s in line.split("=", 1))
            entries[key] = value
    try:
        data_path = entries["data"]
        if not os.path.isabs(data_path):
            data_path = os.path.join(os.path.dirname(os.path.abspath(path)), data_path)
        generator = Generator(
            terms=entries.get("generator_terms", ""),
            beta=_floats(entries["beta"]),
            family=entries.get("family", "cmp_mu"),
            nu=float(entries.get("nu", 1.0)),
            link=entries.get("link", "log"),
        )
        full_terms = entries.get("full_terms", generator.terms)
        parse_formula(full_terms)
        return StudyConfig(
            generator=generator,
            covariate_source=load_csv(data_path),
            full_terms=full_terms,
            restricted_terms=entries.get("restricted_terms", ""),
            n_per_dataset=int(entries.get("n", 100)),
            n_replicates=int(entries.get("replicates", 500)),
            nominal_levels=_floats(entries.get("levels", "0.01 0.05 0.10")),
            base_seed=int(entries.get("seed", 0)),
            test=entries.get("test", "composite"),
            f_calibrate=entries.get("f_calibrate", "true").lower() in ("1", "true", "yes"),
        )
    except KeyError as exc:
        raise ValueError(f"{path}: missing required key {exc.args[0]!r}") from None
