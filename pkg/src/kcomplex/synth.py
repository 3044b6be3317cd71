"""Seeded synthetic corpus: edit events, viewership, indicators and embeddings.

Languages and articles sit on a circle; a language edits nearby articles
more often, so the corpus has real specialization structure. Editors have
heavy-tailed activity and edit in sessions, and article histories contain
identity reverts.
"""

from __future__ import annotations

import math
from datetime import datetime, timedelta, timezone
from pathlib import Path

import numpy as np

from kcomplex import _io
from kcomplex.behavior import SESSION_TIMEOUT
from kcomplex.geo import write_views
from kcomplex.matrix import EditEvent, write_events
from kcomplex.regress import write_indicators

LANGUAGES = ("de", "en", "es", "fr", "ja")
YEARS = (2014, 2015, 2016)
N_ARTICLES = 20
GENRES = ("cooking", "science")
COUNTRIES = ("AR", "AT", "BR", "CA", "CH", "CL", "CO", "DE", "ES", "FR", "GB", "IE", "JP", "MX", "PE", "US")
HOME = {
    "AR": "es", "AT": "de", "BR": "pt", "CA": "en", "CH": "de", "CL": "es", "CO": "es", "DE": "de",
    "ES": "es", "FR": "fr", "GB": "en", "IE": "en", "JP": "ja", "MX": "es", "PE": "es", "US": "en",
}
EMBED_DIM = 8
REVERT_PROB = 0.08
BOT_SHARE = 0.03
SESSIONS_PER_LANG_YEAR = 170


def _articles():
    return tuple(f"Q{1001 + i}" for i in range(N_ARTICLES))


def _geometry(rng):
    lang_theta = np.linspace(0, 2 * np.pi, len(LANGUAGES), endpoint=False) + rng.uniform(0, 0.3, len(LANGUAGES))
    art_theta = np.sort(rng.uniform(0, 2 * np.pi, N_ARTICLES))
    return lang_theta, art_theta


def generate_events(seed: int = 0) -> list[EditEvent]:
    rng = np.random.default_rng(seed)
    lang_theta, art_theta = _geometry(rng)
    articles = _articles()
    genre = {a: GENRES[i % 2] for i, a in enumerate(articles)}
    affinity = np.exp(2.5 * np.cos(lang_theta[:, None] - art_theta[None, :]))
    events = []
    for li, lang in enumerate(LANGUAGES):
        n_editors = 60
        zipf = 1.0 / np.arange(1, n_editors + 1) ** 1.1
        zipf /= zipf.sum()
        bots = {f"{lang}-bot-{k}" for k in range(2)}
        for yi, year in enumerate(YEARS):
            # reach widens over time so later years bring first edits
            reach = affinity[li] * np.where(affinity[li] > np.quantile(affinity[li], 0.45 - 0.15 * yi), 1.0, 0.02)
            p_art = reach / reach.sum()
            start = datetime(year, 1, 1, tzinfo=timezone.utc).timestamp()
            span = datetime(year + 1, 1, 1, tzinfo=timezone.utc).timestamp() - start
            for _ in range(SESSIONS_PER_LANG_YEAR):
                editor = f"{lang}-user-{rng.choice(n_editors, p=zipf):02d}"
                length = int(rng.geometric(0.25))
                t = start + rng.uniform(0, span - 86400)
                art = int(rng.choice(N_ARTICLES, p=p_art))
                for _ in range(length):
                    if rng.random() < 0.35:
                        art = int(rng.choice(N_ARTICLES, p=p_art))
                    is_bot = rng.random() < BOT_SHARE
                    who = sorted(bots)[int(rng.integers(len(bots)))] if is_bot else editor
                    events.append((lang, articles[art], who, int(t), is_bot, genre[articles[art]]))
                    t += rng.uniform(60, 0.5 * SESSION_TIMEOUT.total_seconds())
    return _with_checksums(events, rng)


def _with_checksums(raw, rng) -> list[EditEvent]:
    raw.sort(key=lambda r: (r[0], r[1], r[3], r[2]))
    out = []
    history: list[str] = []
    key = None
    for lang, art, who, ts, is_bot, tag in raw:
        if (lang, art) != key:
            key, history = (lang, art), []
        if len(history) >= 2 and rng.random() < REVERT_PROB:
            checksum = history[-2]
        else:
            checksum = rng.bytes(20).hex()
        history.append(checksum)
        out.append(
            EditEvent(lang, art, who, datetime.fromtimestamp(ts, tz=timezone.utc), checksum, is_bot, frozenset({tag}))
        )
    out.sort(key=lambda e: (e.timestamp, e.language, e.article, e.editor))
    return out


def generate_views(seed: int = 0):
    rng = np.random.default_rng(seed + 1)
    rows = []
    for c in COUNTRIES:
        langs = sorted(set(LANGUAGES) | {HOME[c]})
        alpha = np.array([30.0 if l == HOME[c] else (4.0 if l == "en" else 0.5) for l in langs])
        w = rng.dirichlet(alpha)
        scale = int(rng.integers(10**6, 10**8))
        rows.extend((c, l, int(round(x * scale))) for l, x in zip(langs, w) if round(x * scale) > 0)
    return rows


def generate_indicators(seed: int = 0):
    rng = np.random.default_rng(seed + 2)
    table = {}
    for i, c in enumerate(COUNTRIES):
        level = rng.normal(0, 1)
        for year in YEARS:
            table[c, "NY.GNP.PCAP.CD", year] = float(round(10 ** (4.2 + 0.3 * level + rng.normal(0, 0.05)), 2))
            table[c, "IT.NET.USER.ZS", year] = float(round(min(99.0, 70 + 10 * level + rng.normal(0, 3)), 3))
    return table


def generate_embeddings(seed: int = 0):
    rng = np.random.default_rng(seed)
    _, art_theta = _geometry(rng)
    emb_rng = np.random.default_rng(seed + 3)
    out = {}
    for a, th in zip(_articles(), art_theta):
        v = np.concatenate([[math.cos(th), math.sin(th)], 0.3 * emb_rng.normal(size=EMBED_DIM - 2)])
        out[a] = v / np.linalg.norm(v)
    return out


def write_embeddings(path, embeddings) -> None:
    dim = len(next(iter(embeddings.values())))
    header = ("article",) + tuple(f"v{i + 1}" for i in range(dim))
    _io.write_csv(path, header, ((a, *embeddings[a].tolist()) for a in sorted(embeddings)))


def default_config(out_dir: str = "out") -> dict:
    return {
        "events": "events.tsv",
        "views": "views.csv",
        "indicators": "indicators.csv",
        "embeddings": "embeddings.csv",
        "output_dir": out_dir,
        "slices": [
            {"label": "all"},
            {"label": "cooking", "genre": "cooking"},
            {"label": "science", "genre": "science"},
        ],
        "regress": [
            {"indicator": "NY.GNP.PCAP.CD", "year": 2016},
            {"indicator": "IT.NET.USER.ZS", "year": 2016},
        ],
    }


def write_corpus(directory, seed: int = 0) -> dict[str, Path]:
    """Write every synthetic input plus a ready pipeline config into ``directory``."""
    d = Path(directory)
    paths = {
        "events": d / "events.tsv",
        "views": d / "views.csv",
        "indicators": d / "indicators.csv",
        "embeddings": d / "embeddings.csv",
        "config": d / "pipeline.json",
    }
    write_events(paths["events"], generate_events(seed))
    write_views(paths["views"], generate_views(seed))
    write_indicators(paths["indicators"], generate_indicators(seed))
    write_embeddings(paths["embeddings"], generate_embeddings(seed))
    _io.write_json(paths["config"], default_config())
    return paths


def bundled_dir() -> Path:
    from importlib import resources

    return Path(str(resources.files("kcomplex").joinpath("data/synthetic")))
