"""Genre article sets, revision histories and pageviews-by-country from MediaWiki services."""

from __future__ import annotations

import hashlib
import logging
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

from kcomplex import _io
from kcomplex.errors import ConfigError, HarvestError, NetworkError, ParseError, UnsupportedPeriodError
from kcomplex.geo import iso_codes
from kcomplex.matrix import EditEvent, parse_timestamp

log = logging.getLogger(__name__)

ACTION_API = "https://{lang}.wikipedia.org/w/api.php"
PAGEVIEWS_API = "https://wikimedia.org/api/rest_v1/metrics/pageviews/top-by-country"
DEFAULT_DEPTH = 2
BATCH = 50
HIDDEN_FLAGS = ("userhidden", "sha1hidden", "texthidden", "suppressed")
CATEGORY_NS = 14


@dataclass(frozen=True)
class GenreSpec:
    name: str
    seeds: dict  # language -> tuple of category titles
    depth: int = DEFAULT_DEPTH
    languages: tuple[str, ...] = ()  # empty means no restriction

    def __post_init__(self):
        if not self.name:
            raise ConfigError("genre name must be non-empty")
        if not any(self.seeds.values()):
            raise ConfigError(f"genre {self.name!r} needs at least one seed category")
        if self.depth < 0:
            raise ConfigError("traversal depth must be >= 0")
        object.__setattr__(self, "seeds", {l: tuple(c) for l, c in sorted(self.seeds.items())})
        object.__setattr__(self, "languages", tuple(sorted(self.languages)))

    def allows(self, language: str) -> bool:
        return not self.languages or language in self.languages

    @classmethod
    def from_dict(cls, d: dict) -> "GenreSpec":
        unknown = set(d) - {"name", "seeds", "depth", "languages"}
        if unknown:
            raise ConfigError(f"unknown genre keys: {', '.join(sorted(unknown))}")
        return cls(d["name"], d["seeds"], d.get("depth", DEFAULT_DEPTH), tuple(d.get("languages", ())))


@dataclass(frozen=True, order=True)
class GenreArticle:
    qid: str
    language: str
    title: str


@dataclass
class GenreResult:
    articles: list[GenreArticle]
    warnings: list[str] = field(default_factory=list)


def _query_all(client, url, params):
    """Follow MediaWiki ``continue`` blocks; yields each response."""
    params = dict(params, action="query", format="json", formatversion=2)
    cont: dict = {}
    while True:
        data = client.get_json(url, {**params, **cont})
        yield data
        if "continue" not in data:
            return
        cont = data["continue"]


def _category_title(lang_prefix: str, name: str) -> str:
    return name if ":" in name else f"{lang_prefix}:{name}"


def _category_members(client, url, category):
    pages, subcats = [], []
    for data in _query_all(client, url, {"list": "categorymembers", "cmtitle": category, "cmtype": "page|subcat", "cmlimit": 500}):
        for m in data.get("query", {}).get("categorymembers", []):
            (subcats if m.get("ns") == CATEGORY_NS else pages).append(m["title"])
    return pages, subcats


def _category_exists(client, url, category) -> bool:
    data = client.get_json(url, {"action": "query", "format": "json", "formatversion": 2, "titles": category, "prop": "info"})
    pages = data.get("query", {}).get("pages", [])
    return bool(pages) and not pages[0].get("missing", False)


def _langlinks(client, url, titles):
    """title -> (qid or None, [(lang, title), ...]) for a batch of titles."""
    out: dict[str, tuple] = {}
    for i in range(0, len(titles), BATCH):
        batch = titles[i:i + BATCH]
        params = {"titles": "|".join(batch), "prop": "langlinks|pageprops", "ppprop": "wikibase_item", "lllimit": "max"}
        for data in _query_all(client, url, params):
            for p in data.get("query", {}).get("pages", []):
                if p.get("missing"):
                    continue
                qid, links = out.get(p["title"], (None, []))
                qid = p.get("pageprops", {}).get("wikibase_item", qid)
                links = links + [(ll["lang"], ll["title"]) for ll in p.get("langlinks", [])]
                out[p["title"]] = (qid, links)
    return out


def resolve_genre_articles(spec: GenreSpec, client, api: str = ACTION_API, category_prefix: str = "Category") -> GenreResult:
    """Breadth-first category traversal per seed language, then interlanguage closure.

    Each found article contributes itself and its interlanguage counterparts
    in allowed languages, grouped under the cross-lingual (Wikidata) id.
    Articles without an id are keyed ``language:title``. When one id maps
    to several titles in a language the lexicographically smallest wins.
    """
    warnings = []
    found: dict[str, set[str]] = {}
    for lang, seeds in spec.seeds.items():
        url = api.format(lang=lang)
        queue = deque()
        seen = set()
        for s in seeds:
            cat = _category_title(category_prefix, s)
            if not _category_exists(client, url, cat):
                warnings.append(f"{lang}: seed category {cat!r} not found")
                continue
            queue.append((cat, 0))
            seen.add(cat)
        while queue:
            cat, depth = queue.popleft()
            pages, subcats = _category_members(client, url, cat)
            found.setdefault(lang, set()).update(pages)
            if depth < spec.depth:
                for sc in subcats:
                    if sc not in seen:
                        seen.add(sc)
                        queue.append((sc, depth + 1))
    best: dict[tuple[str, str], str] = {}

    def keep(qid, lang, title):
        if spec.allows(lang):
            k = (qid, lang)
            if k not in best or title < best[k]:
                best[k] = title

    for lang in sorted(found):
        links = _langlinks(client, api.format(lang=lang), sorted(found[lang]))
        for title in sorted(found[lang]):
            qid, others = links.get(title, (None, []))
            qid = qid or f"{lang}:{title}"
            keep(qid, lang, title)
            for olang, otitle in others:
                keep(qid, olang, otitle)
    articles = sorted(GenreArticle(q, l, t) for (q, l), t in best.items())
    for w in warnings:
        log.warning(w)
    return GenreResult(articles, warnings)


def hash_editor(name: str, salt: str) -> str:
    return hashlib.sha256(f"{salt}\x00{name}".encode("utf-8")).hexdigest()[:16]


def _bot_users(client, url, users, bot_suffixes=()):
    bots = set()
    names = sorted(users)
    for i in range(0, len(names), BATCH):
        data = client.get_json(url, {"action": "query", "format": "json", "formatversion": 2, "list": "users", "ususers": "|".join(names[i:i + BATCH]), "usprop": "groups"})
        for u in data.get("query", {}).get("users", []):
            if "bot" in u.get("groups", []):
                bots.add(u["name"])
    if bot_suffixes:
        bots.update(n for n in names if n.lower().endswith(tuple(s.lower() for s in bot_suffixes)))
    return bots


@dataclass
class RevisionResult:
    events: list[EditEvent]
    skipped: int = 0


def fetch_revisions(
    client,
    language: str,
    title: str,
    api: str = ACTION_API,
    article_id: str | None = None,
    salt: str = "",
    bot_suffixes=(),
    genre_tags=(),
) -> RevisionResult:
    """Complete history of one article, oldest first, one event per revision id.

    Revisions with a hidden user or checksum are skipped and counted. Bot
    status comes from the account's user groups, optionally widened by
    username suffixes.
    """
    url = api.format(lang=language)
    task = f"revisions:{language}:{title}"
    cursor = client.cursors.get(task)
    params = {"prop": "revisions", "titles": title, "rvprop": "ids|timestamp|user|sha1|flags", "rvlimit": 500, "rvdir": "newer"}
    revs, seen, skipped = [], set(), 0
    try:
        for data in _query_all(client, url, params):
            for page in data.get("query", {}).get("pages", []):
                for r in page.get("revisions", []):
                    if r["revid"] in seen:
                        continue
                    seen.add(r["revid"])
                    if any(r.get(f) for f in HIDDEN_FLAGS) or "user" not in r or "sha1" not in r:
                        skipped += 1
                        continue
                    revs.append(r)
            client.cursors.update(cursor, token=(data.get("continue") or {}).get("rvcontinue"), done=len(seen))
        bots = _bot_users(client, url, {r["user"] for r in revs}, bot_suffixes) if revs else set()
    except NetworkError as exc:
        raise HarvestError(f"{task}: {exc}", status=exc.status, cursor=cursor) from exc
    client.cursors.update(cursor, complete=True, total=len(seen))
    events = [
        EditEvent(
            language=language,
            article=article_id or title,
            editor=hash_editor(r["user"], salt),
            timestamp=parse_timestamp(r["timestamp"]),
            checksum=r["sha1"] or None,
            is_bot=r["user"] in bots or bool(r.get("bot")),
            genre_tags=frozenset(genre_tags),
            title=title,
        )
        for r in revs
    ]
    events.sort(key=lambda e: e.timestamp)
    return RevisionResult(events, skipped)


def harvest_genre(client, spec: GenreSpec, api: str = ACTION_API, salt: str = "", bot_suffixes=()):
    """Resolve a genre and fetch every history in parallel.

    Output order depends only on the article list, not on scheduling.
    """
    resolved = resolve_genre_articles(spec, client, api)

    def one(a: GenreArticle):
        return fetch_revisions(client, a.language, a.title, api, a.qid, salt, bot_suffixes, (spec.name,))

    with ThreadPoolExecutor(max_workers=client.workers) as pool:
        results = list(pool.map(one, resolved.articles))
    events = [e for r in results for e in r.events]
    return events, sum(r.skipped for r in results), resolved


@dataclass
class PageviewResult:
    rows: list[tuple[str, str, int]]
    excluded_projects: list[str] = field(default_factory=list)
    rejected_countries: list[str] = field(default_factory=list)


def project_language(project: str) -> str | None:
    """``en.wikipedia`` -> ``en``; other projects are not mapped."""
    lang, _, site = project.partition(".")
    return lang if site == "wikipedia" and lang else None


def fetch_pageviews_by_country(
    client,
    year: int,
    projects,
    months=range(1, 13),
    api: str = PAGEVIEWS_API,
    access: str = "all-access",
) -> PageviewResult:
    """Monthly top-by-country views summed over ``months`` per (country, language).

    ``projects`` are project codes such as ``en.wikipedia``. Projects that
    are not encyclopedia editions are excluded and reported; country codes
    outside ISO 3166-1 alpha-2 are rejected and reported. A 404 means the
    service has no data for the period.
    """
    jobs = [(p, m) for p in sorted(set(projects)) for m in months]

    def one(job):
        project, month = job
        url = f"{api}/{project}/{access}/{year}/{month:02d}"
        try:
            return client.get_json(url)
        except NetworkError as exc:
            if exc.status == 404:
                raise UnsupportedPeriodError(f"no pageview data for {project} {year}-{month:02d}", status=404) from None
            raise

    with ThreadPoolExecutor(max_workers=client.workers) as pool:
        payloads = list(pool.map(one, jobs))
    valid = iso_codes()
    totals: dict[tuple[str, str], int] = {}
    excluded, rejected = set(), set()
    for data in payloads:
        for item in data.get("items", []):
            lang = project_language(item.get("project", ""))
            if lang is None:
                excluded.add(item.get("project", ""))
                continue
            for c in item.get("countries", []):
                code = c.get("country", "")
                if code not in valid:
                    rejected.add(code)
                    continue
                views = c.get("views", c.get("views_ceil"))
                if views is None:
                    continue
                totals[code, lang] = totals.get((code, lang), 0) + int(views)
    rows = [(c, l, v) for (c, l), v in sorted(totals.items())]
    return PageviewResult(rows, sorted(excluded), sorted(rejected))


TOPIC_HEADER = ("article", "parent_topic", "child_topic")


def read_topic_labels(path) -> dict[str, frozenset[str]]:
    """Ready-made topic labels ``article,parent_topic,child_topic`` as tag sets."""
    out: dict[str, set[str]] = {}
    problems = []
    for line, row in _io.read_csv_rows(path, TOPIC_HEADER):
        if len(row) != 3 or not row[0]:
            problems.append((line, "expected article,parent_topic,child_topic"))
            continue
        tags = out.setdefault(row[0], set())
        tags.update(t for t in (row[1], f"{row[1]}/{row[2]}" if row[2] else "") if t)
    if problems:
        raise ParseError(path, problems)
    return {a: frozenset(t) for a, t in out.items()}


def tag_events(events, topics: dict[str, frozenset[str]]):
    """Add topic tags to events by article id."""
    return [replace(e, genre_tags=e.genre_tags | topics.get(e.article, frozenset())) for e in events]
