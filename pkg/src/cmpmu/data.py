"""CSV datasets with numeric and categorical columns."""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .errors import EmptyData, ParseError, UnknownVariable

log = logging.getLogger(__name__)


def _parse_float(text):
    try:
        value = float(text)
    except ValueError:
        return None
    # float() accepts "nan"/"inf"; those are not decimal numbers
    return value if math.isfinite(value) else None


@dataclass
class Dataset:
    """Named columns; numeric columns are float arrays (NaN = missing),
    categorical columns are object arrays of strings (None = missing)."""

    columns: dict[str, np.ndarray]
    n_rows: int = field(init=False)

    def __post_init__(self):
        lengths = {len(v) for v in self.columns.values()}
        if len(lengths) > 1:
            raise ValueError("columns have different lengths")
        self.n_rows = lengths.pop() if lengths else 0

    @property
    def names(self):
        return list(self.columns)

    def is_numeric(self, name):
        return self[name].dtype.kind == "f"

    def levels(self, name):
        """Sorted distinct levels of a categorical column."""
        col = self[name]
        return sorted({v for v in col if v is not None})

    def __getitem__(self, name):
        try:
            return self.columns[name]
        except KeyError:
            raise UnknownVariable(f"unknown variable {name!r}") from None

    def __contains__(self, name):
        return name in self.columns

    def missing(self, name):
        col = self[name]
        if col.dtype.kind == "f":
            return np.isnan(col)
        return np.array([v is None for v in col], dtype=bool)

    def take(self, rows):
        rows = np.asarray(rows)
        return Dataset({k: v[rows] for k, v in self.columns.items()})

    def dropna(self, names):
        """Drop rows missing any of ``names``; returns ``(dataset, n_dropped)``."""
        bad = np.zeros(self.n_rows, dtype=bool)
        for name in names:
            bad |= self.missing(name)
        n_bad = int(bad.sum())
        if n_bad:
            log.warning("dropped %d row(s) with missing values", n_bad)
        return self.take(~bad), n_bad


def read_csv_text(text, source="<string>"):
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise EmptyData(f"{source}: no header row") from None
    header = [h.strip() for h in header]
    if len(set(header)) != len(header):
        raise ParseError(f"{source}: duplicate column names", row=1)
    raw = [[] for _ in header]
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise ParseError(
                f"{source}: expected {len(header)} fields, found {len(row)}", row=lineno
            )
        for j, cell in enumerate(row):
            raw[j].append(cell.strip())
    if not raw or not raw[0]:
        raise EmptyData(f"{source}: header only, no data rows")

    columns = {}
    for name, cells in zip(header, raw):
        parsed = [None if c == "" else _parse_float(c) for c in cells]
        numeric = all(p is not None for p, c in zip(parsed, cells) if c != "")
        if numeric:
            columns[name] = np.array([np.nan if p is None else p for p in parsed])
        else:
            columns[name] = np.array([c if c != "" else None for c in cells], dtype=object)
    return Dataset(columns)


def load_csv(path):
    """Read a comma-separated file with a header row into a :class:`Dataset`.

    A column is numeric when every non-empty field parses as a number.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        return read_csv_text(fh.read(), source=str(path))


def _fmt(value):
    if isinstance(value, float):
        if math.isnan(value):
            return ""
        return repr(value)
    return "" if value is None else str(value)


def write_csv(data, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(data.names)
        for i in range(data.n_rows):
            writer.writerow([_fmt(data.columns[k][i].item() if data.is_numeric(k)
                                  else data.columns[k][i]) for k in data.names])


def load_takeover_bids():
    """Bundled takeover-bids data (126 firms; response ``numbids``)."""
    ref = resources.files("cmpmu.datasets").joinpath("takeover_bids.csv")
    return read_csv_text(ref.read_text(encoding="utf-8"), source="takeover_bids.csv")


def summarize(data, names=None):
    """Per-column summary rows.

    Numeric 0/1 columns are reported as binary with the percentage of ones;
    other numeric columns get min, max, mean and sd (n - 1 denominator);
    categorical columns get level counts.
    """
    rows = []
    for name in names or data.names:
        col = data[name]
        if data.is_numeric(name):
            x = col[~np.isnan(col)]
            if x.size and np.all((x == 0) | (x == 1)):
                rows.append({"variable": name, "kind": "binary",
                             "percentage": 100.0 * float(x.mean())})
            else:
                rows.append({"variable": name, "kind": "numeric",
                             "min": float(x.min()), "max": float(x.max()),
                             "mean": float(x.mean()),
                             "sd": float(x.std(ddof=1)) if x.size > 1 else float("nan")})
        else:
            levels = data.levels(name)
            counts = {lv: int(sum(1 for v in col if v == lv)) for lv in levels}
            rows.append({"variable": name, "kind": "categorical", "levels": counts})
    return rows
