"""Editor-level statistics: edit concentration, revert rates and session diversity."""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field
from datetime import timedelta
from typing import Iterable, Sequence

import numpy as np

from kcomplex import _io
from kcomplex.errors import ParseError, PreconditionError, StratumEmptyError
from kcomplex.matrix import EditEvent

SESSION_TIMEOUT = timedelta(minutes=60)
SIGNIFICANCE = 0.01
UNIT_NORM_TOL = 1e-6


@dataclass
class EditorTally:
    editor: str
    per_article: dict = field(default_factory=dict)
    per_article_reverted: dict = field(default_factory=dict)

    @property
    def total(self) -> int:
        return sum(self.per_article.values())

    @property
    def reverted(self) -> int:
        return sum(self.per_article_reverted.values())


# --- concentration ---------------------------------------------------------


@dataclass(frozen=True)
class LorenzResult:
    points: list[tuple[float, float]]
    gini: float


def lorenz_gini(tallies) -> LorenzResult:
    """Lorenz curve of edit totals (editors sorted ascending) and its Gini.

    ``tallies`` may hold EditorTally objects or bare totals. Gini is one
    minus twice the trapezoidal area under the curve, which equals the
    discrete ``sum (2i-n-1) x_i / (n sum x)``.
    """
    totals = [t.total if isinstance(t, EditorTally) else t for t in tallies]
    if not totals:
        raise PreconditionError("at least one editor is required")
    x = np.sort(np.asarray(totals, dtype=np.float64))
    if (x < 0).any() or x.sum() <= 0:
        raise PreconditionError("totals must be nonnegative with a positive sum")
    n = x.size
    cum = np.concatenate([[0.0], np.cumsum(x)]) / x.sum()
    xs = np.arange(n + 1) / n
    area = float(np.sum((cum[1:] + cum[:-1]) / 2.0) / n)
    gini = max(0.0, 1.0 - 2.0 * area)
    return LorenzResult(list(zip(xs.tolist(), cum.tolist())), gini)


def write_lorenz(path, result: LorenzResult) -> None:
    _io.write_csv(path, ("x", "y"), result.points)
    _io.write_json(_io.sidecar_path(path), {"gini": result.gini, "n_editors": len(result.points) - 1})


# --- reverts -----------------------------------------------------------------


@dataclass(frozen=True)
class RevertFlags:
    """Per-revision flags; ``None`` where the checksum was missing."""

    reverted: list
    is_revert: list
    excluded: int


def detect_reverts(checksums: Sequence[str | None], lookback: int | None = None) -> RevertFlags:
    """Identity reverts within one article's time-ordered history.

    A revision whose checksum matches an earlier one reverts everything
    strictly between them; the most recent match is used. ``lookback``
    limits how many earlier revisions are searched.
    """
    reverted: list = [None if c is None else False for c in checksums]
    is_revert: list = [None if c is None else False for c in checksums]
    last_seen: dict[str, int] = {}
    for j, c in enumerate(checksums):
        if c is None:
            continue
        i = last_seen.get(c)
        if i is not None and (lookback is None or j - i <= lookback) and j - i > 1:
            is_revert[j] = True
            for k in range(i + 1, j):
                if reverted[k] is not None:
                    reverted[k] = True
        last_seen[c] = j
    return RevertFlags(reverted, is_revert, sum(c is None for c in checksums))


def tally_editors(events: Iterable[EditEvent], lookback: int | None = None, exclude_bots: bool = True):
    """Per-editor tallies with revert flags from each (language, article) history.

    Returns ``(tallies, excluded)`` where ``excluded`` counts revisions
    without a checksum.
    """
    histories = defaultdict(list)
    for e in events:
        histories[e.language, e.article].append(e)
    tallies: dict[str, EditorTally] = {}
    excluded = 0
    for key in sorted(histories):
        hist = sorted(histories[key], key=lambda e: (e.timestamp, e.editor))
        flags = detect_reverts([e.checksum for e in hist], lookback)
        excluded += flags.excluded
        for e, rev in zip(hist, flags.reverted):
            if rev is None or (exclude_bots and e.is_bot):
                continue
            t = tallies.setdefault(e.editor, EditorTally(e.editor))
            art = f"{e.language}:{e.article}"
            t.per_article[art] = t.per_article.get(art, 0) + 1
            if rev:
                t.per_article_reverted[art] = t.per_article_reverted.get(art, 0) + 1
    return [tallies[k] for k in sorted(tallies)], excluded


@dataclass(frozen=True)
class ZTest:
    gap: float
    z: float
    p: float
    rate_top: float
    rate_bottom: float
    n_top: int
    n_bottom: int
    threshold: float = 0.0

    @property
    def significant(self) -> bool:
        return self.p < SIGNIFICANCE


def normal_sf(z: float) -> float:
    return 0.5 * math.erfc(z / math.sqrt(2.0))


def two_proportion_ztest(x1: int, n1: int, x2: int, n2: int) -> ZTest:
    """Pooled two-sided z-test of rate1 - rate2."""
    if n1 <= 0 or n2 <= 0:
        raise StratumEmptyError("both strata need at least one edit")
    p1, p2 = x1 / n1, x2 / n2
    pooled = (x1 + x2) / (n1 + n2)
    se = math.sqrt(pooled * (1 - pooled) * (1 / n1 + 1 / n2))
    z = (p1 - p2) / se if se > 0 else 0.0
    p = min(1.0, 2.0 * normal_sf(abs(z)))
    return ZTest(p1 - p2, z, p, p1, p2, n1, n2)


def null_false_positive_rate(trials: int, n: int = 1000, rate: float = 0.1, alpha: float = SIGNIFICANCE, seed: int = 0) -> float:
    """Share of equal-rate simulated stratum pairs the z-test calls significant."""
    rng = np.random.default_rng(seed)
    x1 = rng.binomial(n, rate, size=trials)
    x2 = rng.binomial(n, rate, size=trials)
    hits = sum(two_proportion_ztest(int(a), n, int(b), n).p < alpha for a, b in zip(x1, x2))
    return hits / trials


def revert_rate_gap(tallies: Sequence[EditorTally], quantile: float = 0.5, mode: str = "pair") -> ZTest:
    """Revert rate of high-engagement minus low-engagement units.

    ``mode="pair"``: units are (editor, article) pairs, engagement is the
    pair's edit count. ``mode="editor"``: units are editors, engagement is
    their mean edits per article. Units above the quantile form the top
    stratum, the rest the bottom.
    """
    units = []
    for t in tallies:
        if mode == "pair":
            for art, n in t.per_article.items():
                units.append((n, n, t.per_article_reverted.get(art, 0)))
        elif mode == "editor":
            if t.per_article:
                units.append((t.total / len(t.per_article), t.total, t.reverted))
        else:
            raise PreconditionError(f"unknown engagement mode {mode!r}")
    if not units:
        raise StratumEmptyError("no editing units")
    eng = np.array([u[0] for u in units], dtype=np.float64)
    cut = float(np.quantile(eng, quantile))
    top = [u for u in units if u[0] > cut]
    bottom = [u for u in units if u[0] <= cut]
    n_top = sum(u[1] for u in top)
    n_bot = sum(u[1] for u in bottom)
    if n_top == 0 or n_bot == 0:
        raise StratumEmptyError(f"engagement split at {cut} leaves a stratum without edits")
    res = two_proportion_ztest(sum(u[2] for u in top), n_top, sum(u[2] for u in bottom), n_bot)
    return ZTest(res.gap, res.z, res.p, res.rate_top, res.rate_bottom, n_top, n_bot, cut)


# --- sessions ----------------------------------------------------------------


@dataclass(frozen=True)
class Session:
    editor: str
    steps: tuple  # ((article, timestamp), ...)
    timeout: timedelta = SESSION_TIMEOUT

    def __post_init__(self):
        ts = [t for _, t in self.steps]
        if any(b < a for a, b in zip(ts, ts[1:])):
            raise PreconditionError("session timestamps must be nondecreasing")

    @property
    def start(self):
        return self.steps[0][1]


def sessionize(events: Iterable[EditEvent], timeout: timedelta = SESSION_TIMEOUT) -> list[Session]:
    """Split each editor's edits at gaps of ``timeout`` or more.

    Steps carry the article id, the key used by embedding files.
    """
    by_editor = defaultdict(list)
    for e in events:
        by_editor[e.editor].append(e)
    sessions = []
    for editor in sorted(by_editor):
        evs = sorted(by_editor[editor], key=lambda e: (e.timestamp, e.language, e.article))
        cur = [evs[0]]
        for prev, e in zip(evs, evs[1:]):
            if e.timestamp - prev.timestamp >= timeout:
                sessions.append(Session(editor, tuple((x.article, x.timestamp) for x in cur), timeout))
                cur = []
            cur.append(e)
        sessions.append(Session(editor, tuple((x.article, x.timestamp) for x in cur), timeout))
    return sessions


@dataclass(frozen=True)
class DancerResult:
    score: float | None  # None when no step could be scored
    n_steps: int
    skipped: int


def dancer_score(session, embeddings: dict) -> DancerResult:
    """Mean ``1 - cosine`` between consecutive distinct articles of a session.

    ``session`` is a Session or a plain sequence of article keys. Steps
    touching an article without an embedding are skipped.
    """
    articles = [a for a, _ in session.steps] if isinstance(session, Session) else list(session)
    seq = [a for i, a in enumerate(articles) if i == 0 or a != articles[i - 1]]
    dists, skipped = [], 0
    for a, b in zip(seq, seq[1:]):
        ea, eb = embeddings.get(a), embeddings.get(b)
        if ea is None or eb is None:
            skipped += 1
            continue
        dists.append(1.0 - float(np.dot(ea, eb)))
    if not dists:
        return DancerResult(None, 0, skipped)
    return DancerResult(math.fsum(dists) / len(dists), len(dists), skipped)


def read_embeddings(path, normalize: bool = False) -> dict[str, np.ndarray]:
    """``article,v1,...,vd`` CSV; vectors must be unit-norm unless ``normalize``."""
    out, problems, dim = {}, [], None
    rows = _io.read_csv_rows(path)
    for line, row in rows:
        try:
            vec = np.array([float(v) for v in row[1:]], dtype=np.float64)
        except ValueError as exc:
            problems.append((line, str(exc)))
            continue
        if dim is None:
            dim = vec.size
        if vec.size != dim or dim == 0:
            problems.append((line, f"expected {dim} components, got {vec.size}"))
            continue
        norm = float(np.linalg.norm(vec))
        if normalize and norm > 0:
            vec = vec / norm
        elif abs(norm - 1.0) > UNIT_NORM_TOL:
            problems.append((line, f"vector for {row[0]!r} is not unit norm ({norm})"))
            continue
        if row[0] in out:
            problems.append((line, f"duplicate article {row[0]!r}"))
            continue
        out[row[0]] = vec
    if problems:
        raise ParseError(path, problems)
    return out
