"""Formula-lite design matrices.

Grammar: ``term (+ term)*`` where a term is ``factor (: factor)*`` and a
factor is a column name or ``name^2`` (numeric columns only).  ``1`` or an
empty string means intercept only.  An intercept column always comes first.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np

from .errors import UnknownVariable

_NAME = re.compile(r"^[A-Za-z_.][A-Za-z0-9_.]*$")


@dataclass(frozen=True)
class Factor:
    name: str
    square: bool = False

    def __str__(self):
        return f"{self.name}^2" if self.square else self.name


@dataclass(frozen=True)
class Formula:
    terms: tuple[tuple[Factor, ...], ...]

    @property
    def variables(self):
        seen = []
        for term in self.terms:
            for f in term:
                if f.name not in seen:
                    seen.append(f.name)
        return seen

    def __str__(self):
        if not self.terms:
            return "1"
        return " + ".join(":".join(str(f) for f in t) for t in self.terms)


def parse_formula(text):
    text = (text or "").strip()
    if text in ("", "1"):
        return Formula(())
    terms = []
    for raw in text.split("+"):
        raw = raw.strip()
        if raw == "1":
            continue
        if not raw:
            raise ValueError(f"empty term in formula {text!r}")
        factors = []
        for part in raw.split(":"):
            part = re.sub(r"\s*\^\s*", "^", part.strip())
            square = part.endswith("^2")
            name = part[:-2] if square else part
            if not _NAME.match(name):
                raise ValueError(f"bad term {raw!r} in formula {text!r}")
            factors.append(Factor(name, square))
        term = tuple(factors)
        if term not in terms:
            terms.append(term)
    return Formula(tuple(terms))


@dataclass
class DesignMatrix:
    matrix: np.ndarray
    labels: list[str]
    formula: Formula
    # categorical variable -> all levels (sorted); first is the reference
    levels: dict[str, list[str]] = field(default_factory=dict)

    @property
    def reference_levels(self):
        return {k: v[0] for k, v in self.levels.items()}

    @property
    def shape(self):
        return self.matrix.shape

    def take(self, rows):
        return DesignMatrix(self.matrix[rows], list(self.labels), self.formula,
                            dict(self.levels))


def _encode_factor(data, factor, levels):
    """Return ``(columns, labels)`` for one factor."""
    if factor.name not in data:
        raise UnknownVariable(f"unknown variable {factor.name!r}")
    col = data[factor.name]
    if data.is_numeric(factor.name):
        x = col.astype(float)
        if factor.square:
            return [x * x], [str(factor)]
        return [x], [factor.name]
    if factor.square:
        raise ValueError(f"cannot square categorical variable {factor.name!r}")
    lv = levels.setdefault(factor.name, data.levels(factor.name))
    cols, labels = [], []
    for level in lv[1:]:
        cols.append(np.array([v == level for v in col], dtype=float))
        labels.append(f"{factor.name}{level}")
    return cols, labels


def build_design(data, formula, levels=None):
    """Numeric design matrix for ``formula`` over ``data``.

    Categorical columns are dummy coded against their lexicographically
    smallest level unless ``levels`` fixes the level sets.  Interactions are
    elementwise products of every pairing of the factors' encoded columns.
    """
    if isinstance(formula, str):
        formula = parse_formula(formula)
    levels = {k: list(v) for k, v in (levels or {}).items()}
    for name in formula.variables:
        if name not in data:
            raise UnknownVariable(f"unknown variable {name!r}")
    cols = [np.ones(data.n_rows)]
    labels = ["intercept"]
    for term in formula.terms:
        term_cols, term_labels = [np.ones(data.n_rows)], [""]
        for factor in term:
            f_cols, f_labels = _encode_factor(data, factor, levels)
            term_cols = [a * b for a in term_cols for b in f_cols]
            term_labels = [f"{la}:{lb}" if la else lb
                           for la in term_labels for lb in f_labels]
        cols.extend(term_cols)
        labels.extend(term_labels)
    used = {k: v for k, v in levels.items() if k in formula.variables}
    return DesignMatrix(np.column_stack(cols), labels, formula, used)
