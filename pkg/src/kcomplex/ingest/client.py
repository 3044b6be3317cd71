"""HTTP plumbing for harvesting: transports, politeness limiter, retries and a response cache."""

from __future__ import annotations

import json
import threading
import time
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from urllib.parse import urlencode

from kcomplex import _io
from kcomplex.errors import ConfigError, NetworkError

DEFAULT_RATE_PER_MIN = 50
DEFAULT_WORKERS = 4
RETRYABLE = frozenset({429, 500, 502, 503, 504})


def canonical_request(url: str, params: dict | None = None) -> str:
    """``url?k=v&...`` with keys sorted; the identity of a request."""
    if not params:
        return url
    items = sorted((str(k), str(v)) for k, v in params.items())
    return f"{url}?{urlencode(items)}"


def request_key(url: str, params: dict | None = None) -> str:
    return _io.sha256_bytes(canonical_request(url, params).encode("utf-8"))


@dataclass(frozen=True)
class Response:
    status: int
    body: bytes


class Transport:
    """Anything with ``get(url, params) -> Response``."""

    def get(self, url: str, params: dict | None = None) -> Response:  # pragma: no cover - interface
        raise NotImplementedError


class RequestsTransport(Transport):
    """Live HTTP through a shared ``requests.Session``."""

    def __init__(self, user_agent: str, timeout: float = 30.0, session=None):
        if not user_agent or not user_agent.strip():
            raise ConfigError("a descriptive User-Agent with contact info is required")
        import requests

        self._requests = requests
        self.session = session or requests.Session()
        self.session.headers["User-Agent"] = user_agent
        self.timeout = timeout

    def get(self, url, params=None) -> Response:
        try:
            r = self.session.get(url, params=params, timeout=self.timeout)
        except self._requests.RequestException as exc:
            raise ConnectionError(str(exc)) from exc
        return Response(r.status_code, r.content)


class FixtureTransport(Transport):
    """Replays recorded responses; never touches the network.

    Each fixture is a JSON file ``{"url", "params", "status", "body"}``
    where ``body`` is the decoded JSON payload. A request without a
    fixture raises NetworkError.
    """

    def __init__(self, fixtures):
        self.responses: dict[str, Response] = {}
        self.calls: list[str] = []
        self._lock = threading.Lock()
        if isinstance(fixtures, (str, Path)):
            fixtures = [_io.read_json(p) for p in sorted(Path(fixtures).glob("*.json"))]
        for fx in fixtures:
            self.add(fx["url"], fx.get("params"), fx.get("status", 200), fx.get("body"))

    def add(self, url, params, status, body) -> None:
        raw = body if isinstance(body, bytes) else json.dumps(body, sort_keys=True).encode("utf-8")
        self.responses[canonical_request(url, params)] = Response(status, raw)

    def get(self, url, params=None) -> Response:
        key = canonical_request(url, params)
        with self._lock:
            self.calls.append(key)
        if key not in self.responses:
            raise NetworkError(f"no recorded fixture for {key}")
        return self.responses[key]


class SystemClock:
    def now(self) -> float:
        return time.monotonic()

    def sleep(self, seconds: float) -> None:
        if seconds > 0:
            time.sleep(seconds)


class RateLimiter:
    """Token bucket: at most ``capacity`` back-to-back requests, refilled at ``rate_per_min``.

    With the default capacity of 1 consecutive requests are at least
    ``60 / rate_per_min`` seconds apart.
    """

    def __init__(self, rate_per_min: float = DEFAULT_RATE_PER_MIN, capacity: float = 1.0, clock=None):
        if rate_per_min <= 0 or capacity < 1:
            raise ConfigError("rate must be > 0 and capacity >= 1")
        self.interval = 60.0 / rate_per_min
        self.capacity = float(capacity)
        self.clock = clock or SystemClock()
        self._lock = threading.Lock()
        self._tokens = self.capacity
        self._stamp = self.clock.now()
        self.grants: list[float] = []

    def acquire(self) -> None:
        # the lock is held while sleeping so waiting threads queue in order
        with self._lock:
            now = self.clock.now()
            self._tokens = min(self.capacity, self._tokens + (now - self._stamp) / self.interval)
            self._stamp = now
            if self._tokens < 1.0:
                wait = (1.0 - self._tokens) * self.interval
                self.clock.sleep(wait)
                now = self.clock.now()
                self._tokens = min(self.capacity, self._tokens + (now - self._stamp) / self.interval)
                self._stamp = now
            self._tokens -= 1.0
            self.grants.append(now)


class ResponseCache:
    """Content-addressed store: ``<dir>/<aa>/<sha256>.json`` per request."""

    def __init__(self, directory):
        self.directory = Path(directory)

    def _path(self, key: str) -> Path:
        return self.directory / key[:2] / f"{key}.json"

    def get(self, key: str) -> bytes | None:
        p = self._path(key)
        return p.read_bytes() if p.exists() else None

    def put(self, key: str, body: bytes) -> None:
        _io.atomic_write_bytes(self._path(key), body)


@dataclass
class HarvestCursor:
    task: str
    token: str | None = None
    done: int = 0
    total: int | None = None
    updated: str = ""
    complete: bool = False


class CursorStore:
    """Small JSON manifest of per-task progress, shared across threads."""

    def __init__(self, path=None):
        self.path = Path(path) if path else None
        self._lock = threading.Lock()
        self.cursors: dict[str, HarvestCursor] = {}
        if self.path and self.path.exists():
            for task, c in _io.read_json(self.path).items():
                self.cursors[task] = HarvestCursor(**c)

    def get(self, task: str) -> HarvestCursor:
        with self._lock:
            return self.cursors.setdefault(task, HarvestCursor(task))

    def update(self, cursor: HarvestCursor, **changes) -> None:
        with self._lock:
            for k, v in changes.items():
                setattr(cursor, k, v)
            cursor.updated = datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")
            self.cursors[cursor.task] = cursor
            if self.path:
                _io.write_json(self.path, {t: vars(c) for t, c in sorted(self.cursors.items())})


class ApiClient:
    """JSON GETs through cache, rate limiter and bounded exponential backoff.

    Cached responses cost no request and no token. Retryable statuses and
    connection failures are retried ``max_retries`` times, sleeping
    ``backoff * 2**attempt`` seconds; 404 and other client errors fail at
    once.
    """

    def __init__(
        self,
        transport: Transport,
        cache_dir=None,
        limiter: RateLimiter | None = None,
        max_retries: int = 4,
        backoff: float = 1.0,
        clock=None,
        workers: int = DEFAULT_WORKERS,
    ):
        self.transport = transport
        self.cache = ResponseCache(cache_dir) if cache_dir else None
        self.clock = clock or (limiter.clock if limiter else SystemClock())
        self.limiter = limiter or RateLimiter(clock=self.clock)
        self.max_retries = max_retries
        self.backoff = backoff
        self.workers = workers
        self.cursors = CursorStore(Path(cache_dir) / "cursors.json" if cache_dir else None)
        self.requests = 0
        self.cache_hits = 0
        self._count_lock = threading.Lock()

    def get_json(self, url: str, params: dict | None = None):
        key = request_key(url, params)
        if self.cache is not None:
            cached = self.cache.get(key)
            if cached is not None:
                with self._count_lock:
                    self.cache_hits += 1
                return json.loads(cached)
        body = self._fetch(url, params)
        try:
            data = json.loads(body)
        except ValueError as exc:
            raise NetworkError(f"malformed JSON from {canonical_request(url, params)}: {exc}") from None
        if isinstance(data, dict) and "error" in data and not isinstance(data["error"], str):
            raise NetworkError(f"API error {data['error'].get('code')}: {data['error'].get('info')}")
        if self.cache is not None:
            self.cache.put(key, body)
        return data

    def _fetch(self, url, params) -> bytes:
        target = canonical_request(url, params)
        last = None
        for attempt in range(self.max_retries + 1):
            if attempt:
                self.clock.sleep(self.backoff * 2 ** (attempt - 1))
            self.limiter.acquire()
            with self._count_lock:
                self.requests += 1
            try:
                resp = self.transport.get(url, params)
            except ConnectionError as exc:
                last = NetworkError(f"connection failed for {target}: {exc}")
                continue
            if resp.status == 200:
                return resp.body
            if resp.status in RETRYABLE:
                last = NetworkError(f"HTTP {resp.status} for {target}", status=resp.status)
                continue
            raise NetworkError(f"HTTP {resp.status} for {target}", status=resp.status)
        raise NetworkError(f"gave up after {self.max_retries + 1} attempts: {last}", status=getattr(last, "status", None))
