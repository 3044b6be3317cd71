"""Networked harvesting of edit histories and viewership from MediaWiki services."""

from kcomplex.ingest.client import (  # noqa: F401
    ApiClient,
    FixtureTransport,
    HarvestCursor,
    RateLimiter,
    RequestsTransport,
    ResponseCache,
)
from kcomplex.ingest.harvest import (  # noqa: F401
    GenreArticle,
    GenreSpec,
    fetch_pageviews_by_country,
    fetch_revisions,
    harvest_genre,
    resolve_genre_articles,
)
