"""Command line interface: ``cmpmu <subcommand> ...``.

JSON goes to stdout with floats written losslessly; tables are TSV with six
significant digits.  Exit codes: 0 success, 1 usage or data error, 2 fit
did not converge.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys

import numpy as np
from scipy import stats

from . import distribution as dist
from .data import load_csv, load_takeover_bids, summarize
from .diagnostics import pit, pit_histogram, pit_quantile_table
from .errors import CmpError, NoConvergence
from .fit import ModelSpec, fit_glm, prepare
from .inference import lrt_composite, lrt_poisson
from .simulate import read_study_config, run_study

BUILTIN = {"builtin:takeover_bids": load_takeover_bids}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _json_float(x):
    x = float(x)
    return x if math.isfinite(x) else None


def _emit_json(obj):
    sys.stdout.write(json.dumps(obj, indent=2, allow_nan=False) + "\n")


def _emit_tsv(header, rows):
    out = ["\t".join(header)]
    for row in rows:
        out.append("\t".join(f"{v:.6g}" if isinstance(v, float) else str(v) for v in row))
    sys.stdout.write("\n".join(out) + "\n")


def _load(path):
    if path in BUILTIN:
        return BUILTIN[path]()
    return load_csv(path)


def _add_model_flags(p):
    p.add_argument("--data", required=True,
                   help="CSV file, or builtin:takeover_bids")
    p.add_argument("--response", required=True)
    p.add_argument("--terms", default="", help="mean formula, e.g. 'a + b + a:b + x^2'")
    p.add_argument("--dispersion-terms", default=None)
    p.add_argument("--offset", default=None, help="exposure column (positive)")
    p.add_argument("--link", choices=("log", "identity"), default="log")
    p.add_argument("--fixed-nu", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)


def _spec(args, terms=None, fixed_nu="unset"):
    return ModelSpec(
        response=args.response,
        mean_terms=args.terms if terms is None else terms,
        link=args.link,
        dispersion_terms=args.dispersion_terms,
        offset=args.offset,
        fixed_nu=args.fixed_nu if fixed_nu == "unset" else fixed_nu,
    )


def _fit(spec, data):
    design, ddesign, y, exposure, dropped = prepare(spec, data)
    model = fit_glm(spec, design, y, dispersion_design=ddesign, exposure=exposure)
    return model, y, dropped


def _coef_rows(names, est, cov):
    se = np.sqrt(np.diag(cov))
    t = est / se
    p = 2.0 * stats.norm.sf(np.abs(t))
    return [
        {"name": nm, "estimate": _json_float(b), "se": _json_float(s),
         "t": _json_float(tv), "p": _json_float(pv)}
        for nm, b, s, tv, pv in zip(names, est, se, t, p)
    ]


def fit_report(model, spec, dropped=0):
    if model.dispersion == "fixed":
        disp = {"type": "fixed", "nu": model.nu, "poisson": model.nu == 1.0}
    elif model.dispersion == "constant":
        disp = {"type": "constant", "nu": _json_float(model.nu),
                "se": _json_float(model.se_disp[0])}
    else:
        disp = {"type": "regression",
                "coefficients": _coef_rows(model.dispersion_labels, model.gamma,
                                           model.cov_disp)}
    return {
        "model": {"response": spec.response, "terms": spec.mean_terms or "1",
                  "link": spec.link, "dispersion_terms": spec.dispersion_terms,
                  "offset": spec.offset},
        "n": model.n_obs,
        "dropped_rows": dropped,
        "coefficients": _coef_rows(model.labels, model.beta, model.cov_beta),
        "dispersion": disp,
        "loglik": _json_float(model.loglik),
        "aic": _json_float(model.aic),
        "n_params": model.n_params,
        "converged": model.converged,
        "iterations": model.iterations,
        "score_norm": _json_float(model.score_norm),
        "loglik_change": _json_float(model.loglik_change),
    }


def cmd_fit(args):
    spec = _spec(args)
    model, _, dropped = _fit(spec, _load(args.data))
    _emit_json(fit_report(model, spec, dropped))
    return 0 if model.converged else 2


def cmd_test(args):
    data = _load(args.data)
    full, _, _ = _fit(_spec(args), data)
    if args.poisson:
        other, _, _ = _fit(_spec(args, fixed_nu=1.0), data)
        result = lrt_poisson(full, other)
    else:
        other, _, _ = _fit(_spec(args, terms=args.restricted_terms), data)
        r = full.n_mean_params - other.n_mean_params
        if r < 1:
            raise UsageError("restricted model must have fewer mean coefficients")
        result = lrt_composite(full, other, r, f_calibrate=args.f_calibrate)
    out = result.as_dict()
    out.update(loglik_full=full.loglik, loglik_restricted=other.loglik, n=full.n_obs)
    if result.p_f is not None:
        out["note"] = "F denominator df = n - q, q = mean-model coefficients of the full model"
    _emit_json(out)
    return 0 if (full.converged and other.converged) else 2


def cmd_pit(args):
    if args.seed is None:
        raise UsageError("--seed is required for pit")
    spec = _spec(args)
    model, y, _ = _fit(spec, _load(args.data))
    sample = pit(model, y, args.seed)
    rows = [("meta", "seed", sample.seed), ("meta", "ks_statistic", sample.ks_statistic)]
    rows += [("quantile", float(a), float(b))
             for a, b in pit_quantile_table(sample, args.grid)]
    rows += [("histogram", float(0.5 * (lo + hi)), int(c))
             for lo, hi, c in pit_histogram(sample, args.bins)]
    _emit_tsv(["table", "x", "y"], rows)
    return 0 if model.converged else 2


def cmd_simulate(args):
    config = read_study_config(args.config)
    result = run_study(config, n_jobs=args.jobs)
    rows = [(r["level"], r["rejections"], r["valid"], r["failed"], r["rate"], r["se"])
            for r in result.table()]
    _emit_tsv(["level", "rejections", "valid", "failed", "rate", "se"], rows)
    if result.n_failed:
        logging.getLogger(__name__).warning("%d replicate(s) excluded", result.n_failed)
    return 0


def cmd_summarize(args):
    data = _load(args.data)
    names = args.columns.split(",") if args.columns else None
    rows = []
    for s in summarize(data, names):
        if s["kind"] == "numeric":
            rows.append((s["variable"], "numeric", s["min"], s["max"], s["mean"], s["sd"], ""))
        elif s["kind"] == "binary":
            rows.append((s["variable"], "binary", "", "", "", "", s["percentage"]))
        else:
            levels = ";".join(f"{k}={v}" for k, v in s["levels"].items())
            rows.append((s["variable"], "categorical", "", "", "", "", levels))
    _emit_tsv(["variable", "kind", "min", "max", "mean", "sd", "percentage"], rows)
    return 0


def _float_list(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"expected comma-separated numbers, got {text!r}") from None


def cmd_pmf_table(args):
    rows = []
    for mu in _float_list(args.mu):
        for nu in _float_list(args.nu):
            params = dist.CmpParams.from_mean(mu, nu)
            ymax = args.ymax if args.ymax is not None else params.truncation
            ys = np.arange(0, ymax + 1)
            for y, p in zip(ys, dist.pmf(ys, params)):
                rows.append((mu, nu, int(y), float(p)))
    _emit_tsv(["mu", "nu", "y", "pmf"], rows)
    return 0


def build_parser():
    parser = _Parser(prog="cmpmu", description="Mean-parametrized CMP regression.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("fit", help="fit a regression and print a JSON report")
    _add_model_flags(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("test", help="likelihood ratio test")
    _add_model_flags(p)
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--restricted-terms", default=None)
    g.add_argument("--poisson", action="store_true", help="test nu = 1")
    p.add_argument("--f-calibrate", action="store_true")
    p.set_defaults(func=cmd_test)

    p = sub.add_parser("pit", help="randomized PIT tables")
    _add_model_flags(p)
    p.add_argument("--grid", type=int, default=99)
    p.add_argument("--bins", type=int, default=10)
    p.set_defaults(func=cmd_pit)

    p = sub.add_parser("simulate", help="run a simulation study config")
    p.add_argument("--config", required=True)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("summarize", help="per-column summary statistics")
    p.add_argument("--data", required=True)
    p.add_argument("--columns", default=None)
    p.set_defaults(func=cmd_summarize)

    p = sub.add_parser("pmf-table", help="pmf rows for grids of mu and nu")
    p.add_argument("--mu", required=True)
    p.add_argument("--nu", required=True)
    p.add_argument("--ymax", type=int, default=None)
    p.set_defaults(func=cmd_pmf_table)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except NoConvergence as exc:
        print(f"cmpmu: {exc}", file=sys.stderr)
        return 2
    except (UsageError, CmpError, ValueError, OSError, KeyError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"cmpmu: error: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
