"""Mean-parametrized Conway-Maxwell-Poisson distributions and regression."""

from .data import Dataset, load_csv, load_takeover_bids, summarize
from .diagnostics import PitSample, pit, pit_histogram, pit_quantile_table
from .distribution import (
    CmpParams,
    MomentFunctionals,
    approx_mean,
    cdf,
    log_normalizer,
    log_pmf,
    mean_from_rate,
    moment_functionals,
    pmf,
    quantile,
    raw_moment,
    sample,
    solve_rate,
)
from .fit import (
    CountRegression,
    FittedModel,
    ModelSpec,
    fisher_blocks,
    fit_glm,
    fit_iid,
    fit_model,
    score_vector,
)
from .formula import DesignMatrix, build_design, parse_formula
from .inference import Hypothesis, TestResult, compare, lrt_composite, lrt_poisson, wald_test
from .simulate import Generator, StudyConfig, run_study, simulate_dataset

__version__ = "0.1.0"
