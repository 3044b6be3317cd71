"""Shared data model: edit events, labeled sparse matrices and corpus slices.

All matrices are stored as canonical CSR (sorted indices, no duplicates,
no explicit zeros) with languages and articles sorted lexicographically.
"""

from __future__ import annotations

import hashlib
from collections import Counter
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Iterable, Iterator, Mapping

import numpy as np
import scipy.sparse as sp

from kcomplex import _io
from kcomplex.errors import EmptyMatrixError, ParseError, PreconditionError, UnknownLabelError

EVENT_HEADER = ("language", "article", "editor", "timestamp", "checksum", "is_bot", "genre_tags")
FORMAT_VERSION = 1


@dataclass(frozen=True)
class EditEvent:
    language: str
    article: str
    editor: str
    timestamp: datetime
    checksum: str | None = None
    is_bot: bool = False
    genre_tags: frozenset = frozenset()
    title: str = ""

    def __post_init__(self):
        if not self.language:
            raise ValueError("language must be non-empty")
        if not self.article:
            raise ValueError("article must be non-empty")
        if not isinstance(self.timestamp, datetime):
            raise TypeError("timestamp must be a datetime")
        ts = self.timestamp
        if ts.tzinfo is None:
            ts = ts.replace(tzinfo=timezone.utc)
        else:
            ts = ts.astimezone(timezone.utc)
        object.__setattr__(self, "timestamp", ts.replace(microsecond=0))
        if not isinstance(self.genre_tags, frozenset):
            object.__setattr__(self, "genre_tags", frozenset(self.genre_tags))

    @property
    def year(self) -> int:
        return self.timestamp.year


@dataclass(frozen=True)
class CorpusSlice:
    """A genre/topic label plus an optional inclusive year range.

    ``label=None`` matches every event regardless of genre tags.
    """

    label: str | None = None
    year_range: tuple[int, int] | None = None
    lineage: tuple[str, ...] = ()

    def __post_init__(self):
        if self.year_range is not None:
            lo, hi = self.year_range
            if lo > hi:
                raise PreconditionError(f"year_from {lo} > year_to {hi}")
            object.__setattr__(self, "year_range", (int(lo), int(hi)))

    def contains(self, event: EditEvent) -> bool:
        if self.label is not None and self.label not in event.genre_tags:
            return False
        if self.year_range is not None:
            lo, hi = self.year_range
            if not lo <= event.timestamp.year <= hi:
                return False
        return True

    def as_meta(self) -> dict:
        return {
            "label": self.label,
            "year_range": list(self.year_range) if self.year_range else None,
            "lineage": list(self.lineage),
        }

    @classmethod
    def from_meta(cls, meta: Mapping | None) -> "CorpusSlice | None":
        if not meta:
            return None
        yr = meta.get("year_range")
        return cls(meta.get("label"), tuple(yr) if yr else None, tuple(meta.get("lineage") or ()))


@dataclass(frozen=True)
class PruneReport:
    dropped_languages: tuple[str, ...] = ()
    dropped_articles: tuple[str, ...] = ()

    def __bool__(self):
        return bool(self.dropped_languages or self.dropped_articles)

    def merged(self, other: "PruneReport") -> "PruneReport":
        return PruneReport(
            tuple(sorted(set(self.dropped_languages) | set(other.dropped_languages))),
            tuple(sorted(set(self.dropped_articles) | set(other.dropped_articles))),
        )

    def as_meta(self) -> dict:
        return {"dropped_languages": list(self.dropped_languages), "dropped_articles": list(self.dropped_articles)}


@dataclass(frozen=True)
class IndexMap:
    """Old -> new positions after pruning; dropped positions are absent."""

    rows: dict
    cols: dict


def _canonical_csr(mat, dtype) -> sp.csr_matrix:
    mat = sp.csr_matrix(mat, dtype=dtype, copy=True)
    mat.sum_duplicates()
    mat.eliminate_zeros()
    mat.sort_indices()
    for arr in (mat.data, mat.indices, mat.indptr):
        arr.flags.writeable = False
    return mat


class LabeledMatrix:
    """Sparse languages x articles matrix with ordered label indices.

    Instances are immutable. Labels are always kept in lexicographic order,
    rows/columns are permuted into that order on construction.
    """

    kind = "matrix"
    value_name = "value"
    dtype = np.float64

    def __init__(self, languages, articles, values, slice_meta=None, prune_report=None):
        languages = tuple(str(x) for x in languages)
        articles = tuple(str(x) for x in articles)
        if len(set(languages)) != len(languages):
            raise PreconditionError("duplicate language labels")
        if len(set(articles)) != len(articles):
            raise PreconditionError("duplicate article labels")
        mat = sp.csr_matrix(values)
        if mat.shape != (len(languages), len(articles)):
            raise PreconditionError(f"shape {mat.shape} does not match labels ({len(languages)}, {len(articles)})")
        row_order = sorted(range(len(languages)), key=languages.__getitem__)
        col_order = sorted(range(len(articles)), key=articles.__getitem__)
        if row_order != list(range(len(languages))) or col_order != list(range(len(articles))):
            mat = mat[row_order][:, col_order]
            languages = tuple(languages[i] for i in row_order)
            articles = tuple(articles[j] for j in col_order)
        mat = _canonical_csr(mat, self.dtype)
        if mat.nnz and mat.data.min() < 0:
            raise PreconditionError(f"{self.kind} values must be nonnegative")
        self._languages = languages
        self._articles = articles
        self._values = mat
        self._slice_meta = dict(slice_meta) if slice_meta else None
        self._prune_report = prune_report or PruneReport()
        self._lang_pos = {k: i for i, k in enumerate(languages)}
        self._art_pos = {k: j for j, k in enumerate(articles)}

    languages = property(lambda self: self._languages)
    articles = property(lambda self: self._articles)
    values = property(lambda self: self._values)
    slice_meta = property(lambda self: self._slice_meta)
    prune_report = property(lambda self: self._prune_report)

    @property
    def shape(self):
        return self._values.shape

    @property
    def nnz(self):
        return self._values.nnz

    def language_index(self, language) -> int:
        try:
            return self._lang_pos[language]
        except KeyError:
            raise UnknownLabelError(f"unknown language {language!r}") from None

    def article_index(self, article) -> int:
        try:
            return self._art_pos[article]
        except KeyError:
            raise UnknownLabelError(f"unknown article {article!r}") from None

    def get(self, language, article):
        return self._values[self.language_index(language), self.article_index(article)]

    def toarray(self) -> np.ndarray:
        return self._values.toarray()

    def row_totals(self) -> np.ndarray:
        return np.asarray(self._values.sum(axis=1)).ravel()

    def col_totals(self) -> np.ndarray:
        return np.asarray(self._values.sum(axis=0)).ravel()

    def triplets(self) -> Iterator[tuple[str, str, object]]:
        coo = self._values.tocoo()
        # canonical CSR yields row-major, column-sorted order already
        for i, j, v in zip(coo.row, coo.col, coo.data):
            yield self._languages[i], self._articles[j], v

    def with_values(self, values, languages=None, articles=None, prune_report=None, cls=None):
        cls = cls or type(self)
        return cls(
            self._languages if languages is None else languages,
            self._articles if articles is None else articles,
            values,
            slice_meta=self._slice_meta,
            prune_report=self._prune_report if prune_report is None else prune_report,
        )

    def digest(self) -> str:
        v = self._values
        h = hashlib.sha256()
        h.update(self.kind.encode())
        h.update("\x1f".join(self._languages).encode())
        h.update(b"\x1e")
        h.update("\x1f".join(self._articles).encode())
        for arr in (v.indptr.astype(np.int64), v.indices.astype(np.int64), v.data.astype(self.dtype)):
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()

    def __eq__(self, other):
        if not isinstance(other, LabeledMatrix) or other.kind != self.kind:
            return NotImplemented
        a, b = self._values, other._values
        return (
            self._languages == other._languages
            and self._articles == other._articles
            and a.shape == b.shape
            and np.array_equal(a.indptr, b.indptr)
            and np.array_equal(a.indices, b.indices)
            and np.array_equal(a.data, b.data)
        )

    __hash__ = None

    def __repr__(self):
        return f"{type(self).__name__}({len(self._languages)} languages x {len(self._articles)} articles, nnz={self.nnz})"

    def manifest(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "kind": self.kind,
            "languages": list(self._languages),
            "articles": list(self._articles),
            "slice_meta": self._slice_meta,
            "prune_report": self._prune_report.as_meta(),
            "digest": self.digest(),
        }


class ActivityMatrix(LabeledMatrix):
    """Edit counts E[language, article]."""

    kind = "activity"
    value_name = "count"
    dtype = np.int64


def _parse_bool(text):
    t = text.strip().lower()
    if t in ("1", "true", "t", "yes", "y"):
        return True
    if t in ("0", "false", "f", "no", "n", ""):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def parse_timestamp(text) -> datetime:
    t = text.strip()
    if t.endswith("Z"):
        t = t[:-1] + "+00:00"
    ts = datetime.fromisoformat(t)
    if ts.tzinfo is None:
        raise ValueError(f"timestamp without timezone: {text!r}")
    return ts.astimezone(timezone.utc)


def format_timestamp(ts: datetime) -> str:
    return ts.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def read_events(path) -> list[EditEvent]:
    """Parse an edit-event TSV; all malformed rows are reported together."""
    events, problems = [], []
    for line, row in _io.read_csv_rows(path, EVENT_HEADER, delimiter="\t"):
        if len(row) != len(EVENT_HEADER):
            problems.append((line, f"expected {len(EVENT_HEADER)} fields, got {len(row)}"))
            continue
        lang, art, editor, ts, checksum, is_bot, tags = row
        try:
            events.append(
                EditEvent(
                    language=lang.strip(),
                    article=art.strip(),
                    editor=editor,
                    timestamp=parse_timestamp(ts),
                    checksum=checksum or None,
                    is_bot=_parse_bool(is_bot),
                    genre_tags=frozenset(t for t in tags.split("|") if t),
                )
            )
        except (ValueError, TypeError) as exc:
            problems.append((line, str(exc)))
    if problems:
        raise ParseError(path, problems)
    return events


def write_events(path, events: Iterable[EditEvent]) -> None:
    rows = (
        (
            e.language,
            e.article,
            e.editor,
            format_timestamp(e.timestamp),
            e.checksum or "",
            "true" if e.is_bot else "false",
            "|".join(sorted(e.genre_tags)),
        )
        for e in events
    )
    _io.write_csv(path, EVENT_HEADER, rows, delimiter="\t")


def build_activity_matrix(
    events: Iterable[EditEvent], slice: CorpusSlice | None = None, exclude_bots: bool = True
) -> ActivityMatrix:
    """Count edits per (language, article) among events inside ``slice``.

    Languages or articles that only appear in excluded events (bots, other
    genres, other years) are listed in the prune report.
    """
    tally = Counter()
    seen_langs, seen_arts = set(), set()
    for ev in events:
        seen_langs.add(ev.language)
        seen_arts.add(ev.article)
        if exclude_bots and ev.is_bot:
            continue
        if slice is not None and not slice.contains(ev):
            continue
        tally[ev.language, ev.article] += 1
    if not tally:
        raise EmptyMatrixError("no events left after filtering")
    langs = sorted({l for l, _ in tally})
    arts = sorted({a for _, a in tally})
    li = {k: i for i, k in enumerate(langs)}
    ai = {k: j for j, k in enumerate(arts)}
    rows = np.fromiter((li[l] for l, _ in tally), dtype=np.int64, count=len(tally))
    cols = np.fromiter((ai[a] for _, a in tally), dtype=np.int64, count=len(tally))
    data = np.fromiter(tally.values(), dtype=np.int64, count=len(tally))
    counts = sp.coo_matrix((data, (rows, cols)), shape=(len(langs), len(arts)))
    report = PruneReport(tuple(sorted(seen_langs - set(langs))), tuple(sorted(seen_arts - set(arts))))
    return ActivityMatrix(langs, arts, counts, slice_meta=slice.as_meta() if slice else None, prune_report=report)


def merge(*shards: LabeledMatrix) -> LabeledMatrix:
    """Entrywise sum of matrices over the union of their label indices."""
    if not shards:
        raise EmptyMatrixError("nothing to merge")
    cls = type(shards[0])
    langs = sorted(set().union(*(s.languages for s in shards)))
    arts = sorted(set().union(*(s.articles for s in shards)))
    li = {k: i for i, k in enumerate(langs)}
    ai = {k: j for j, k in enumerate(arts)}
    total = sp.csr_matrix((len(langs), len(arts)), dtype=cls.dtype)
    for s in shards:
        coo = s.values.tocoo()
        r = np.array([li[s.languages[i]] for i in coo.row], dtype=np.int64)
        c = np.array([ai[s.articles[j]] for j in coo.col], dtype=np.int64)
        total = total + sp.csr_matrix((coo.data, (r, c)), shape=total.shape)
    report = PruneReport()
    for s in shards:
        report = report.merged(s.prune_report)
    return cls(langs, arts, total, slice_meta=shards[0].slice_meta, prune_report=report)


def prune(matrix: LabeledMatrix, min_row_total=1, min_col_total=1) -> tuple[LabeledMatrix, IndexMap]:
    """Drop rows/columns whose totals fall below the thresholds, to a fixpoint."""
    if min_row_total < 1 or min_col_total < 1:
        raise PreconditionError("prune thresholds must be >= 1")
    mat = matrix.values
    rows = np.arange(mat.shape[0])
    cols = np.arange(mat.shape[1])
    while True:
        rt = np.asarray(mat.sum(axis=1)).ravel()
        ct = np.asarray(mat.sum(axis=0)).ravel()
        keep_r = rt >= min_row_total
        keep_c = ct >= min_col_total
        if keep_r.all() and keep_c.all():
            break
        mat = mat[keep_r][:, keep_c]
        rows, cols = rows[keep_r], cols[keep_c]
        if mat.shape[0] == 0 or mat.shape[1] == 0:
            raise EmptyMatrixError("pruning removed every row or column")
    dropped = PruneReport(
        tuple(matrix.languages[i] for i in sorted(set(range(matrix.shape[0])) - set(rows.tolist()))),
        tuple(matrix.articles[j] for j in sorted(set(range(matrix.shape[1])) - set(cols.tolist()))),
    )
    out = matrix.with_values(
        mat,
        languages=[matrix.languages[i] for i in rows],
        articles=[matrix.articles[j] for j in cols],
        prune_report=matrix.prune_report.merged(dropped),
    )
    index_map = IndexMap({int(o): n for n, o in enumerate(rows)}, {int(o): n for n, o in enumerate(cols)})
    return out, index_map


def slice_by_year(events: Iterable[EditEvent], year: int) -> Iterator[EditEvent]:
    """Events with timestamp in [Jan 1 ``year``, Jan 1 ``year``+1) UTC."""
    start = datetime(year, 1, 1, tzinfo=timezone.utc)
    end = datetime(year + 1, 1, 1, tzinfo=timezone.utc)
    return (e for e in events if start <= e.timestamp < end)


def write_matrix(matrix: LabeledMatrix, path) -> None:
    """CSV triplets plus a JSON sidecar manifest next to it."""
    _io.write_csv(path, ("language", "article", matrix.value_name), matrix.triplets())
    _io.write_json(_io.sidecar_path(path), matrix.manifest())


def read_matrix(path, cls=None) -> LabeledMatrix:
    """Inverse of :func:`write_matrix`; the sidecar is optional."""
    from kcomplex.rca import AdvantageMatrix, RcaMatrix

    kinds = {c.kind: c for c in (ActivityMatrix, RcaMatrix, AdvantageMatrix)}
    manifest = None
    side = _io.sidecar_path(path)
    if side.exists():
        manifest = _io.read_json(side)
    if cls is None:
        cls = kinds.get((manifest or {}).get("kind"), ActivityMatrix)
    header = ("language", "article", cls.value_name)
    triples, problems = [], []
    for line, row in _io.read_csv_rows(path, header):
        if len(row) != 3:
            problems.append((line, f"expected 3 fields, got {len(row)}"))
            continue
        lang, art, val = row
        if not lang or not art:
            problems.append((line, "empty language or article"))
            continue
        try:
            v = int(val) if cls.dtype is np.int64 else float(val)
        except ValueError:
            problems.append((line, f"bad {cls.value_name} {val!r}"))
            continue
        if not np.isfinite(v) or v < 0:
            problems.append((line, f"{cls.value_name} must be finite and nonnegative"))
            continue
        triples.append((line, lang, art, v))
    seen = {}
    for line, lang, art, _ in triples:
        if (lang, art) in seen:
            problems.append((line, f"duplicate entry ({lang}, {art}), first on line {seen[lang, art]}"))
        else:
            seen[lang, art] = line
    if problems:
        raise ParseError(path, problems)
    if manifest:
        langs, arts = manifest["languages"], manifest["articles"]
    else:
        langs = sorted({t[1] for t in triples})
        arts = sorted({t[2] for t in triples})
    li = {k: i for i, k in enumerate(langs)}
    ai = {k: j for j, k in enumerate(arts)}
    try:
        r = [li[t[1]] for t in triples]
        c = [ai[t[2]] for t in triples]
    except KeyError as exc:
        raise ParseError(path, [(0, f"label {exc.args[0]!r} missing from manifest")]) from None
    vals = sp.coo_matrix(
        (np.array([t[3] for t in triples], dtype=cls.dtype), (np.array(r, dtype=np.int64), np.array(c, dtype=np.int64))),
        shape=(len(langs), len(arts)),
    )
    report = PruneReport()
    slice_meta = None
    if manifest:
        pr = manifest.get("prune_report") or {}
        report = PruneReport(tuple(pr.get("dropped_languages", ())), tuple(pr.get("dropped_articles", ())))
        slice_meta = manifest.get("slice_meta")
    return cls(langs, arts, vals, slice_meta=slice_meta, prune_report=report)


def events_by_year(events: Iterable[EditEvent]) -> dict[int, list[EditEvent]]:
    out: dict[int, list[EditEvent]] = {}
    for e in events:
        out.setdefault(e.timestamp.year, []).append(e)
    return dict(sorted(out.items()))
