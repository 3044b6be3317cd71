"""Viewership weights and country-level weighted ECI."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources

from kcomplex import _io
from kcomplex.errors import DataError, DuplicateKeyError, ParseError, PreconditionError

LOW_COVERAGE = 0.05
DEFAULT_SNAPSHOT_YEAR = 2016
VIEWS_HEADER = ("country", "language", "views")
MAP_HEADER = ("country_iso2", "value", "coverage", "flag")


@lru_cache(maxsize=None)
def iso_codes() -> frozenset[str]:
    text = resources.files("kcomplex").joinpath("data/iso3166_alpha2.txt").read_text(encoding="utf-8")
    return frozenset(line.strip() for line in text.splitlines() if line.strip())


@dataclass(frozen=True)
class ViewershipWeights:
    """Row-stochastic country x language weights.

    ``weights[country][language]`` sums to 1 over languages for every
    country present.
    """

    weights: dict
    snapshot_year: int = DEFAULT_SNAPSHOT_YEAR
    dropped_countries: tuple[str, ...] = ()

    @property
    def countries(self) -> tuple[str, ...]:
        return tuple(sorted(self.weights))

    @property
    def languages(self) -> tuple[str, ...]:
        return tuple(sorted({l for row in self.weights.values() for l in row}))


def build_weights(view_counts, snapshot_year: int = DEFAULT_SNAPSHOT_YEAR) -> ViewershipWeights:
    """Normalize ``(country, language, views)`` rows per country."""
    raw: dict[str, dict[str, float]] = {}
    for country, language, views in view_counts:
        views = float(views)
        if not math.isfinite(views) or views < 0:
            raise DataError(f"views must be finite and >= 0 ({country}, {language}): {views}")
        row = raw.setdefault(country, {})
        if language in row:
            raise DuplicateKeyError(f"duplicate (country, language) row: ({country}, {language})")
        row[language] = views
    weights, dropped = {}, []
    for country in sorted(raw):
        row = raw[country]
        total = math.fsum(row.values())
        if total <= 0:
            dropped.append(country)
            continue
        weights[country] = {l: v / total for l, v in sorted(row.items()) if v > 0}
    return ViewershipWeights(weights, snapshot_year, tuple(dropped))


def read_views(path):
    rows, problems = [], []
    for line, row in _io.read_csv_rows(path, VIEWS_HEADER):
        if len(row) != 3:
            problems.append((line, f"expected 3 fields, got {len(row)}"))
            continue
        try:
            rows.append((row[0].strip(), row[1].strip(), float(row[2])))
        except ValueError:
            problems.append((line, f"bad views {row[2]!r}"))
    if problems:
        raise ParseError(path, problems)
    return rows


def write_views(path, rows) -> None:
    _io.write_csv(path, VIEWS_HEADER, sorted(rows))


@dataclass(frozen=True)
class CountryComplexity:
    value: float
    coverage: float

    @property
    def low_coverage(self) -> bool:
        return self.coverage < LOW_COVERAGE


@dataclass
class WeightedEci:
    values: dict[str, CountryComplexity]
    omitted: list[str] = field(default_factory=list)
    snapshot_year: int = DEFAULT_SNAPSHOT_YEAR


def weighted_eci(weights: ViewershipWeights, eci) -> WeightedEci:
    """Country value = ECI averaged with the country's weights restricted to scored languages.

    ``eci`` is a ComplexityScores or a plain language -> score mapping.
    Coverage is the country's weight mass on scored languages before
    renormalization.
    """
    if hasattr(eci, "eci_map"):
        eci = eci.eci_map()
    if not set(eci) & set(weights.languages):
        raise PreconditionError("no language overlaps between weights and scores")
    out, omitted = {}, []
    for country in weights.countries:
        row = weights.weights[country]
        matched = {l: w for l, w in row.items() if l in eci}
        coverage = math.fsum(matched.values())
        if coverage <= 0:
            omitted.append(country)
            continue
        value = math.fsum(w * eci[l] for l, w in matched.items()) / coverage
        out[country] = CountryComplexity(value, min(1.0, coverage))
    return WeightedEci(out, omitted, weights.snapshot_year)


def rank_countries(values: dict[str, CountryComplexity], top_n: int | None = None) -> list[tuple[int, str, CountryComplexity]]:
    if not values:
        raise PreconditionError("nothing to rank")
    order = sorted(values, key=lambda c: (-values[c].value, c))
    if top_n is not None:
        order = order[:top_n]
    return [(i + 1, c, values[c]) for i, c in enumerate(order)]


def rank_transition(per_slice: dict[str, dict[str, CountryComplexity]], top_n: int | None = None):
    """Long table ``(slice, country, rank)`` for bump charts."""
    rows = []
    for label in sorted(per_slice):
        for rank, country, _ in rank_countries(per_slice[label], top_n):
            rows.append((label, country, rank))
    return rows


def map_rows(result: WeightedEci):
    """Rows for the choropleth join; only ISO 3166-1 alpha-2 codes are emitted."""
    valid = iso_codes()
    rows, rejected = [], []
    for country in sorted(result.values):
        if country not in valid:
            rejected.append(country)
            continue
        cc = result.values[country]
        rows.append((country, cc.value, cc.coverage, "low-coverage" if cc.low_coverage else "ok"))
    return rows, rejected


def write_map(path, result: WeightedEci) -> list[str]:
    rows, rejected = map_rows(result)
    _io.write_csv(path, MAP_HEADER, rows)
    _io.write_json(
        _io.sidecar_path(path),
        {
            "snapshot_year": result.snapshot_year,
            "omitted_no_overlap": sorted(result.omitted),
            "rejected_non_iso": rejected,
            "low_coverage_threshold": LOW_COVERAGE,
        },
    )
    return rejected


def write_ranking(path, result: WeightedEci, top_n: int | None = None) -> None:
    rows = [(r, c, cc.value, cc.coverage) for r, c, cc in rank_countries(result.values, top_n)]
    _io.write_csv(path, ("rank", "country", "value", "coverage"), rows)
