"""Univariate least squares of country complexity against economic indicators."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy import stats

from kcomplex import _io
from kcomplex.errors import (
    DegenerateRegressorError,
    DuplicateKeyError,
    InsufficientOverlapError,
    ParseError,
    PreconditionError,
)
from kcomplex.geo import CountryComplexity, rank_countries

INDICATOR_HEADER = ("country_iso2", "indicator", "year", "value")
SCATTER_HEADER = ("country", "x", "y")

# level variables that are regressed on a log10 scale unless overridden
LOG10_INDICATORS = frozenset({"NY.GNP.PCAP.CD", "NY.GNP.PCAP.PP.CD", "NY.GDP.PCAP.CD", "gni_per_capita"})


@dataclass(frozen=True)
class OlsFit:
    slope: float
    intercept: float
    r2: float
    p_slope: float
    n: int
    stderr: float

    def as_dict(self) -> dict:
        return asdict(self)


def ols_fit(pairs) -> OlsFit:
    """Closed-form simple regression ``y = intercept + slope * x``.

    ``p_slope`` is the two-sided t-test of slope = 0 on n - 2 degrees of
    freedom; with a perfect fit the standard error is 0 and p is 0.
    """
    arr = np.asarray(list(pairs), dtype=np.float64).reshape(-1, 2)
    n = arr.shape[0]
    if n < 3:
        raise InsufficientOverlapError(f"need at least 3 points, got {n}")
    if not np.isfinite(arr).all():
        raise PreconditionError("pairs must be finite")
    x, y = arr[:, 0], arr[:, 1]
    xc = x - x.mean()
    yc = y - y.mean()
    sxx = float(xc @ xc)
    if sxx <= 1e-300 or np.ptp(x) == 0:
        raise DegenerateRegressorError("x is constant")
    syy = float(yc @ yc)
    sxy = float(xc @ yc)
    slope = sxy / sxx
    intercept = float(y.mean() - slope * x.mean())
    r2 = 1.0 if syy == 0 else min(1.0, max(0.0, sxy * sxy / (sxx * syy)))
    rss = float(np.sum((y - intercept - slope * x) ** 2))
    dof = n - 2
    stderr = math.sqrt(rss / dof / sxx)
    if stderr == 0:
        p = 1.0 if slope == 0 else 0.0
    else:
        p = float(2.0 * stats.t.sf(abs(slope / stderr), dof))
    return OlsFit(slope, intercept, r2, p, n, stderr)


def read_indicators(path) -> dict[tuple[str, str, int], float]:
    """Long-format indicator CSV keyed by ``(country, indicator, year)``."""
    table, problems = {}, []
    for line, row in _io.read_csv_rows(path, INDICATOR_HEADER):
        if len(row) != 4:
            problems.append((line, f"expected 4 fields, got {len(row)}"))
            continue
        country, indicator = row[0].strip(), row[1].strip()
        try:
            year = int(row[2])
            value = float(row[3])
        except ValueError:
            problems.append((line, f"bad year/value {row[2]!r}, {row[3]!r}"))
            continue
        if not math.isfinite(value):
            problems.append((line, f"value must be finite, got {row[3]!r}"))
            continue
        key = (country, indicator, year)
        if key in table:
            problems.append((line, f"duplicate key {key}"))
            continue
        table[key] = value
    if problems:
        if all("duplicate" in msg for _, msg in problems):
            raise DuplicateKeyError(f"{path}: " + "; ".join(f"line {l}: {m}" for l, m in problems))
        raise ParseError(path, problems)
    return table


def write_indicators(path, table) -> None:
    _io.write_csv(path, INDICATOR_HEADER, ((c, i, y, v) for (c, i, y), v in sorted(table.items())))


@dataclass
class Regression:
    indicator: str
    year: int
    log10: bool
    top_n: int | None
    fit: OlsFit
    scatter: list[tuple[str, float, float]]
    unmatched: list[str]

    def as_dict(self) -> dict:
        return {
            "indicator": self.indicator,
            "year": self.year,
            "log10": self.log10,
            "top_n": self.top_n,
            "fit": self.fit.as_dict(),
            "unmatched": self.unmatched,
        }


def regress_eci(
    countries: dict[str, CountryComplexity],
    table: dict,
    indicator: str,
    year: int,
    top_n: int | None = None,
    log10: bool | None = None,
) -> Regression:
    """Regress the indicator (x) on weighted ECI (y) over matched countries.

    ``top_n`` first restricts to the best-ranked countries. ``log10=None``
    applies the per-indicator default; nonpositive values cannot be logged
    and count as unmatched.
    """
    if log10 is None:
        log10 = indicator in LOG10_INDICATORS
    ranked = [c for _, c, _ in rank_countries(countries, top_n)]
    scatter, unmatched = [], []
    for c in sorted(ranked):
        v = table.get((c, indicator, year))
        if v is None or (log10 and v <= 0):
            unmatched.append(c)
            continue
        scatter.append((c, math.log10(v) if log10 else v, countries[c].value))
    if len(scatter) < 3:
        raise InsufficientOverlapError(
            f"only {len(scatter)} countries have {indicator} for {year}; need 3", unmatched
        )
    fit = ols_fit([(x, y) for _, x, y in scatter])
    return Regression(indicator, year, log10, top_n, fit, scatter, unmatched)


def write_regression(path, reg: Regression) -> None:
    """Scatter CSV plus the fit parameters in the JSON sidecar."""
    _io.write_csv(path, SCATTER_HEADER, reg.scatter)
    _io.write_json(_io.sidecar_path(path), reg.as_dict())
