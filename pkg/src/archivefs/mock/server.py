"""HTTP test double for the archive API.

Serves a :class:`~archivefs.mock.fixture.MemoryArchive` with the wire
protocol described in ``docs/protocol.md``: JSON bodies, ``Link: <...>;
rel="next"`` pagination, 404 for unknown objects, and optional fault
injection (delays, transient 5xx errors, 429 with ``Retry-After``).
"""

from __future__ import annotations

import json
import logging
import random
import re
import socket
import threading
import time
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Any
from urllib.parse import parse_qs, quote, unquote, urlsplit

from archivefs.mock.fixture import MemoryArchive
from archivefs.swhid import SWHID, ObjectType, SWHIDError, parse_swhid

log = logging.getLogger(__name__)

API_PREFIX = "/api/1/"

ENDPOINTS = (
    "content_raw", "content", "directory", "revision", "release",
    "snapshot", "visits", "search", "graph",
)

_ROUTES = [
    ("content_raw", re.compile(r"^content/sha1_git:([0-9a-f]{40})/raw/$")),
    ("content", re.compile(r"^content/sha1_git:([0-9a-f]{40})/$")),
    ("directory", re.compile(r"^directory/([0-9a-f]{40})/$")),
    ("revision", re.compile(r"^revision/([0-9a-f]{40})/$")),
    ("release", re.compile(r"^release/([0-9a-f]{40})/$")),
    ("snapshot", re.compile(r"^snapshot/([0-9a-f]{40})/$")),
    ("search", re.compile(r"^origin/search/(.*)/$")),
    ("visits", re.compile(r"^origin/(.+)/visits/$")),
    ("graph", re.compile(r"^graph/visit/nodes/([^/]+)/$")),
]


@dataclass
class ServerOptions:
    """Knobs for pagination and fault injection; safe to mutate while serving."""

    page_size: int = 1000
    delays: dict[str, float] = field(default_factory=dict)
    object_delays: dict[str, float] = field(default_factory=dict)
    error_rate: dict[str, float] = field(default_factory=dict)
    rate_limit: dict[str, int] = field(default_factory=dict)
    retry_after: float = 1.0
    graph_enabled: bool = True
    graph_dates: bool = True
    token: str | None = None
    seed: int = 0


@dataclass(frozen=True)
class RequestRecord:
    method: str
    path: str
    endpoint: str | None
    status: int
    started: float
    finished: float
    headers: dict[str, str]


class _Handler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    disable_nagle_algorithm = True  # headers and body go out in separate writes
    server: _Server

    def log_message(self, format: str, *args: Any) -> None:
        log.debug("%s - %s", self.address_string(), format % args)

    def do_GET(self) -> None:
        self._handle(head=False)

    def do_HEAD(self) -> None:
        self._handle(head=True)

    def _handle(self, head: bool) -> None:
        started = time.monotonic()
        endpoint = None
        try:
            endpoint, status, headers, body = self.server.mock.dispatch(self.path, self.headers)
        except Exception:  # pragma: no cover - surfaced as a 500 to the client
            log.exception("mock server failure on %s", self.path)
            status, headers, body = 500, {"Content-Type": "application/json"}, b'{"exception": "internal"}'
        # logged before the response is sent, so a client never sees a reply
        # whose request is missing from the log
        self.server.mock.record(
            RequestRecord("HEAD" if head else "GET", self.path, endpoint, status, started,
                          time.monotonic(), dict(self.headers.items()))
        )
        self.send_response(status)
        for k, v in headers.items():
            self.send_header(k, v)
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        if not head:
            try:
                self.wfile.write(body)
            except OSError:
                pass


class _Server(ThreadingHTTPServer):
    daemon_threads = True
    allow_reuse_address = True
    mock: MockArchiveServer

    def __init__(self, addr, handler, mock):
        self.mock = mock
        self._conns: set[socket.socket] = set()
        self._conns_lock = threading.Lock()
        super().__init__(addr, handler)

    def process_request(self, request, client_address):
        with self._conns_lock:
            self._conns.add(request)
        super().process_request(request, client_address)

    def shutdown_request(self, request):
        with self._conns_lock:
            self._conns.discard(request)
        super().shutdown_request(request)

    def drop_connections(self) -> None:
        with self._conns_lock:
            conns = list(self._conns)
            self._conns.clear()
        for conn in conns:
            try:
                conn.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            conn.close()


def _json(status: int, doc: Any, headers: dict[str, str] | None = None):
    h = {"Content-Type": "application/json"}
    h.update(headers or {})
    return status, h, json.dumps(doc, ensure_ascii=True).encode()


def _not_found(reason: str):
    return _json(404, {"exception": "NotFoundExc", "reason": reason})


class MockArchiveServer:
    """Threaded HTTP server exposing ``archive``; use as a context manager."""

    def __init__(self, archive: MemoryArchive, options: ServerOptions | None = None,
                 host: str = "127.0.0.1", port: int = 0) -> None:
        self.archive = archive
        self.options = options or ServerOptions()
        self.host, self.port = host, port
        self._log: list[RequestRecord] = []
        self._log_lock = threading.Lock()
        self._counts: dict[str, int] = {}
        self._rng = random.Random(self.options.seed)
        self._httpd: _Server | None = None
        self._thread: threading.Thread | None = None
        self._search_index = sorted(archive.origins)
        self._rev_index = self._build_rev_index()

    def _build_rev_index(self) -> dict[SWHID, list[SWHID]]:
        return {
            swhid: [SWHID(ObjectType.REVISION, p["id"]) for p in doc["parents"]]
            for swhid, doc in self.archive.revisions.items()
        }

    # -- lifecycle -------------------------------------------------------

    def start(self) -> str:
        self._httpd = _Server((self.host, self.port), _Handler, self)
        self.port = self._httpd.server_address[1]
        self._thread = threading.Thread(target=self._httpd.serve_forever, args=(0.05,), name="mock-archive", daemon=True)
        self._thread.start()
        return self.base_url

    def stop(self) -> None:
        """Stop serving and sever open keep-alive connections."""
        if self._httpd is None:
            return
        self._httpd.shutdown()
        self._httpd.server_close()
        self._httpd.drop_connections()
        self._httpd = None
        if self._thread:
            self._thread.join(timeout=5)

    def __enter__(self) -> MockArchiveServer:
        self.start()
        return self

    def __exit__(self, *exc) -> None:
        self.stop()

    @property
    def address(self) -> tuple[str, int]:
        return self.host, self.port

    @property
    def base_url(self) -> str:
        return f"http://{self.host}:{self.port}{API_PREFIX}"

    # -- request log -----------------------------------------------------

    def record(self, rec: RequestRecord) -> None:
        with self._log_lock:
            self._log.append(rec)

    def requests(self, endpoint: str | None = None) -> list[RequestRecord]:
        with self._log_lock:
            return [r for r in self._log if endpoint is None or r.endpoint == endpoint]

    def clear_log(self) -> None:
        with self._log_lock:
            self._log.clear()

    # -- dispatch --------------------------------------------------------

    def dispatch(self, raw_path: str, headers) -> tuple[str | None, int, dict[str, str], bytes]:
        parts = urlsplit(raw_path)
        if not parts.path.startswith(API_PREFIX):
            return (None, *_not_found("unknown endpoint"))
        rel = parts.path[len(API_PREFIX):]
        query = {k: v[-1] for k, v in parse_qs(parts.query).items()}
        for endpoint, pattern in _ROUTES:
            m = pattern.match(rel)
            if m:
                break
        else:
            return (None, *_not_found("unknown endpoint"))

        opts = self.options
        if opts.token is not None and headers.get("Authorization") != f"Bearer {opts.token}":
            return (endpoint, *_json(401, {"exception": "Unauthorized", "reason": "bad token"}))

        with self._log_lock:
            n = self._counts.get(endpoint, 0)
            self._counts[endpoint] = n + 1
            limited = n < opts.rate_limit.get(endpoint, 0)
            failing = self._rng.random() < opts.error_rate.get(endpoint, 0.0)
        if limited:
            return (endpoint, *_json(429, {"exception": "RateLimited"},
                                     {"Retry-After": f"{opts.retry_after:g}"}))
        delay = opts.delays.get(endpoint, 0.0) + opts.object_delays.get(m.group(1), 0.0)
        if delay:
            time.sleep(delay)
        if failing:
            return (endpoint, *_json(503, {"exception": "ServiceUnavailable"}))

        handler = getattr(self, f"_get_{endpoint}")
        return (endpoint, *handler(m.group(1), query, raw_path))

    def _next_link(self, raw_path: str, **params: Any) -> dict[str, str]:
        parts = urlsplit(raw_path)
        query = {k: v[-1] for k, v in parse_qs(parts.query).items()}
        query.update({k: str(v) for k, v in params.items()})
        qs = "&".join(f"{k}={quote(v, safe='')}" for k, v in query.items())
        return {"Link": f'<http://{self.host}:{self.port}{parts.path}?{qs}>; rel="next"'}

    def _page_size(self, query: dict[str, str]) -> int:
        return max(1, min(int(query.get("per_page", self.options.page_size)), self.options.page_size))

    def _get_content_raw(self, h: str, query, raw_path):
        data = self.archive.blobs.get(SWHID(ObjectType.CONTENT, h))
        if data is None:
            return _not_found(f"content {h} not found")
        return 200, {"Content-Type": "application/octet-stream"}, data

    def _get_content(self, h: str, query, raw_path):
        doc = self.archive.contents.get(SWHID(ObjectType.CONTENT, h))
        return _json(200, doc) if doc is not None else _not_found(f"content {h} not found")

    def _get_directory(self, h: str, query, raw_path):
        entries = self.archive.directories.get(SWHID(ObjectType.DIRECTORY, h))
        if entries is None:
            return _not_found(f"directory {h} not found")
        size = self._page_size(query)
        offset = int(query.get("offset", 0))
        page = entries[offset:offset + size]
        headers = {}
        if offset + size < len(entries):
            headers = self._next_link(raw_path, offset=offset + size)
        return _json(200, page, headers)

    def _get_revision(self, h: str, query, raw_path):
        doc = self.archive.revisions.get(SWHID(ObjectType.REVISION, h))
        return _json(200, doc) if doc is not None else _not_found(f"revision {h} not found")

    def _get_release(self, h: str, query, raw_path):
        doc = self.archive.releases.get(SWHID(ObjectType.RELEASE, h))
        return _json(200, doc) if doc is not None else _not_found(f"release {h} not found")

    def _get_snapshot(self, h: str, query, raw_path):
        doc = self.archive.snapshots.get(SWHID(ObjectType.SNAPSHOT, h))
        if doc is None:
            return _not_found(f"snapshot {h} not found")
        names = sorted(doc["branches"])
        size = self._page_size({"per_page": query.get("branches_count", self.options.page_size)})
        start = query.get("branches_from", "")
        names = [n for n in names if n >= start]
        page, rest = names[:size], names[size:]
        body = {"id": doc["id"], "branches": {n: doc["branches"][n] for n in page},
                "next_branch": rest[0] if rest else None}
        headers = self._next_link(raw_path, branches_from=rest[0], branches_count=size) if rest else {}
        return _json(200, body, headers)

    def _get_visits(self, encoded: str, query, raw_path):
        url = unquote(encoded)
        visits = self.archive.origins.get(url)
        if visits is None:
            return _not_found(f"origin {url} not found")
        # newest first, like the live API; clients must not rely on order
        ordered = sorted(visits, key=lambda v: v["visit"], reverse=True)
        size = self._page_size(query)
        offset = int(query.get("offset", 0))
        page = ordered[offset:offset + size]
        headers = self._next_link(raw_path, offset=offset + size) if offset + size < len(ordered) else {}
        return _json(200, page, headers)

    def _get_search(self, encoded: str, query, raw_path):
        words = unquote(encoded).lower().split()
        limit = int(query.get("limit", 50))
        hits = [u for u in self._search_index if words and all(w in u.lower() for w in words)]
        return _json(200, [{"url": u} for u in hits[:limit]])

    def _get_graph(self, raw: str, query, raw_path):
        if not self.options.graph_enabled:
            return _not_found("graph service unavailable")
        try:
            start = parse_swhid(unquote(raw))
        except SWHIDError:
            return _json(400, {"exception": "BadInputExc", "reason": "invalid SWHID"})
        if start not in self._rev_index:
            return _not_found(f"{start} not found")
        seen = {start}
        order = [start]
        stack = [start]
        while stack:
            for parent in self._rev_index.get(stack.pop(), ()):
                if parent not in seen and parent in self._rev_index:
                    seen.add(parent)
                    order.append(parent)
                    stack.append(parent)
        lines = []
        for swhid in order:
            if self.options.graph_dates:
                lines.append(f"{swhid} {self.archive.revisions[swhid]['committer_date']}")
            else:
                lines.append(str(swhid))
        return 200, {"Content-Type": "text/plain"}, ("\n".join(lines) + "\n").encode()
