"""REST client for the archive API.

One :class:`ArchiveClient` is shared by all filesystem workers: it wraps a
``requests.Session`` whose connection pool keeps HTTP connections alive, and
retries transient failures with exponential backoff.
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from datetime import datetime
from typing import Any, Callable, Iterator
from urllib.parse import quote

import requests
from requests.adapters import HTTPAdapter

from archivefs.model import (
    DirEntry,
    OriginVisit,
    ReleaseMeta,
    RevisionMeta,
    SnapshotBranches,
    parse_date,
    sort_history,
)
from archivefs.swhid import SWHID, ObjectType, SWHIDError, parse_swhid

log = logging.getLogger(__name__)

DEFAULT_API_URL = "https://archive.softwareheritage.org/api/1/"


class ArchiveError(Exception):
    pass


class NotFound(ArchiveError):
    pass


class TransportError(ArchiveError):
    pass


class RateLimited(TransportError):
    def __init__(self, message: str, retry_after: float | None) -> None:
        super().__init__(message)
        self.retry_after = retry_after


class BadPattern(ArchiveError, ValueError):
    pass


def _expect(swhid: SWHID, *types: ObjectType) -> None:
    if swhid.object_type not in types:
        raise ValueError(f"expected a {'/'.join(t.value for t in types)} SWHID, got {swhid}")


@dataclass
class Blob:
    """A content body being downloaded; iterate for chunks or call :meth:`read`."""

    length: int | None
    _response: requests.Response
    chunk_size: int = 64 * 1024

    def __iter__(self) -> Iterator[bytes]:
        received = 0
        try:
            for chunk in self._response.iter_content(self.chunk_size):
                received += len(chunk)
                yield chunk
        except requests.RequestException as exc:
            raise TransportError(f"blob download interrupted: {exc}") from exc
        finally:
            self._response.close()
        if self.length is not None and received != self.length:
            raise TransportError(f"blob truncated: got {received} of {self.length} bytes")

    def read(self) -> bytes:
        return b"".join(self)

    def close(self) -> None:
        self._response.close()


class Pages:
    """Lazy iterator over a paginated endpoint, following ``Link: rel=next``.

    ``done`` turns true as soon as the last page has been handed out, so
    callers can tell a finished listing apart without another ``next()``.
    """

    def __init__(self, client: ArchiveClient, path: str, params: dict | None = None, check=None) -> None:
        self._client = client
        self._url: str | None = path
        self._params = params
        self._check = check
        self.done = False

    def __iter__(self) -> Pages:
        return self

    def __next__(self) -> Any:
        if self._url is None:
            self.done = True
            raise StopIteration
        resp = self._client._request(self._url, self._params)
        self._params = None  # the next link carries its own query string
        try:
            page = resp.json()
        except ValueError as exc:
            raise TransportError(f"GET {resp.url}: malformed JSON") from exc
        if self._check is not None:
            self._check(page)
        self._url = resp.links.get("next", {}).get("url")
        self.done = self._url is None
        return page


class ArchiveClient:
    def __init__(
        self,
        base_url: str = DEFAULT_API_URL,
        token: str | None = None,
        timeout: float | tuple[float, float] = (10.0, 60.0),
        retries: int = 3,
        backoff: float = 0.5,
        max_retry_after: float = 60.0,
        pool_size: int = 16,
    ) -> None:
        self.base_url = base_url.rstrip("/") + "/"
        self.timeout = timeout
        self.retries = retries
        self.backoff = backoff
        self.max_retry_after = max_retry_after
        self.pool_size = pool_size
        self.session = requests.Session()
        adapter = HTTPAdapter(pool_connections=4, pool_maxsize=pool_size)
        self.session.mount("http://", adapter)
        self.session.mount("https://", adapter)
        if token:
            self.session.headers["Authorization"] = f"Bearer {token}"

    def close(self) -> None:
        self.session.close()

    # -- transport ---------------------------------------------------------

    def _url(self, path: str) -> str:
        return path if path.startswith(("http://", "https://")) else self.base_url + path

    def _request(self, path: str, params: dict | None = None, stream: bool = False) -> requests.Response:
        url = self._url(path)
        for attempt in range(self.retries + 1):
            last = attempt == self.retries
            try:
                resp = self.session.get(url, params=params, timeout=self.timeout, stream=stream)
            except requests.RequestException as exc:
                if last:
                    raise TransportError(f"GET {url}: {exc}") from exc
                log.debug("GET %s failed (%s), retrying", url, exc)
                time.sleep(self.backoff * 2 ** attempt)
                continue
            if resp.status_code == 200:
                return resp
            resp.close()
            if resp.status_code == 404:
                raise NotFound(f"GET {url}: not found")
            if resp.status_code == 429:
                retry_after = _retry_after(resp)
                if last:
                    raise RateLimited(f"GET {url}: rate limited", retry_after)
                wait = self.backoff * 2 ** attempt if retry_after is None else retry_after
                time.sleep(min(wait, self.max_retry_after))
                continue
            if resp.status_code >= 500 and not last:
                time.sleep(self.backoff * 2 ** attempt)
                continue
            raise TransportError(f"GET {url}: HTTP {resp.status_code}")
        raise AssertionError("unreachable")

    def _json(self, path: str, params: dict | None = None) -> Any:
        resp = self._request(path, params)
        try:
            return resp.json()
        except ValueError as exc:
            raise TransportError(f"GET {resp.url}: malformed JSON") from exc

    def _pages(self, path: str, params: dict | None = None, check=None) -> Pages:
        return Pages(self, path, params, check)

    # -- objects -------------------------------------------------------------

    def content_metadata(self, swhid: SWHID) -> dict:
        _expect(swhid, ObjectType.CONTENT)
        return self._json(f"content/sha1_git:{swhid.hash}/")

    def open_blob(self, swhid: SWHID) -> Blob:
        _expect(swhid, ObjectType.CONTENT)
        resp = self._request(f"content/sha1_git:{swhid.hash}/raw/", stream=True)
        length = resp.headers.get("Content-Length")
        return Blob(int(length) if length is not None else None, resp)

    def get_blob(self, swhid: SWHID) -> bytes:
        return self.open_blob(swhid).read()

    def directory_pages(self, swhid: SWHID) -> Pages:
        """Raw entry documents, one list per server page, fetched lazily."""
        _expect(swhid, ObjectType.DIRECTORY)

        def check(page):
            if not isinstance(page, list):
                raise TransportError(f"directory {swhid}: expected a list of entries")

        return self._pages(f"directory/{swhid.hash}/", check=check)

    def list_directory(self, swhid: SWHID) -> Iterator[DirEntry]:
        for page in self.directory_pages(swhid):
            for doc in page:
                yield DirEntry.from_dict(doc)

    def revision_document(self, swhid: SWHID) -> dict:
        _expect(swhid, ObjectType.REVISION)
        return self._json(f"revision/{swhid.hash}/")

    def get_revision(self, swhid: SWHID) -> RevisionMeta:
        return RevisionMeta.from_dict(self.revision_document(swhid))

    def release_document(self, swhid: SWHID) -> dict:
        _expect(swhid, ObjectType.RELEASE)
        return self._json(f"release/{swhid.hash}/")

    def get_release(self, swhid: SWHID) -> ReleaseMeta:
        return ReleaseMeta.from_dict(self.release_document(swhid))

    def snapshot_document(self, swhid: SWHID) -> dict:
        """Snapshot document with all branch pages merged."""
        _expect(swhid, ObjectType.SNAPSHOT)
        merged: dict[str, Any] = {"id": swhid.hash, "branches": {}}
        for page in self._pages(f"snapshot/{swhid.hash}/"):
            merged["branches"].update(page.get("branches") or {})
        return merged

    def get_snapshot(self, swhid: SWHID) -> SnapshotBranches:
        return SnapshotBranches.from_dict(self.snapshot_document(swhid))

    def document(self, swhid: SWHID) -> Any:
        """Metadata document of any object type (directories: merged entry list)."""
        t = swhid.object_type
        if t is ObjectType.CONTENT:
            return self.content_metadata(swhid)
        if t is ObjectType.DIRECTORY:
            return [doc for page in self.directory_pages(swhid) for doc in page]
        if t is ObjectType.REVISION:
            return self.revision_document(swhid)
        if t is ObjectType.RELEASE:
            return self.release_document(swhid)
        return self.snapshot_document(swhid)

    # -- origins -------------------------------------------------------------

    def origin_visits_document(self, url: str) -> list[dict]:
        if not url:
            raise ValueError("origin URL must not be empty")
        docs: list[dict] = []
        for page in self._pages(f"origin/{quote(url, safe='')}/visits/"):
            docs.extend(page)
        return docs

    def get_origin_visits(self, url: str) -> list[OriginVisit]:
        return sort_visits(OriginVisit.from_dict(d) for d in self.origin_visits_document(url))

    def search_origins(self, pattern: str, limit: int = 50) -> list[str]:
        if not pattern or not pattern.strip():
            raise BadPattern("search pattern must not be empty")
        if limit < 1:
            raise ValueError("limit must be at least 1")
        docs = self._json(f"origin/search/{quote(pattern, safe='')}/", {"limit": limit})
        return [d["url"] for d in docs][:limit]

    # -- history -------------------------------------------------------------

    def history(
        self,
        swhid: SWHID,
        fetch: Callable[[SWHID], RevisionMeta] | None = None,
    ) -> list[SWHID]:
        """Ancestors of ``swhid`` (excluded) in "git log" order.

        Uses the graph traversal endpoint and falls back to :meth:`walk_parents`
        when it is unavailable. ``fetch`` replaces :meth:`get_revision` for any
        per-commit lookups, so callers can route them through a cache.
        """
        _expect(swhid, ObjectType.REVISION)
        fetch = fetch or self.get_revision
        try:
            nodes = self._graph_nodes(swhid)
        except (NotFound, TransportError) as exc:
            log.info("graph endpoint unusable for %s (%s); walking parents", swhid, exc)
            return self.walk_parents(swhid, fetch)
        nodes.pop(swhid, None)
        missing = [s for s, d in nodes.items() if d is None]
        if missing:
            with ThreadPoolExecutor(max_workers=self.pool_size) as pool:
                for meta in pool.map(fetch, missing):
                    nodes[meta.id] = meta.committer_date
        return sort_history(nodes.items())

    def _graph_nodes(self, swhid: SWHID) -> dict[SWHID, datetime | None]:
        resp = self._request(f"graph/visit/nodes/{swhid}/", {"edges": "rev:rev"})
        nodes: dict[SWHID, datetime | None] = {}
        for line in resp.text.splitlines():
            fields = line.split()
            if not fields:
                continue
            try:
                node = parse_swhid(fields[0])
                date = parse_date(fields[1]) if len(fields) > 1 else None
            except (SWHIDError, ValueError) as exc:
                raise TransportError(f"graph visit: bad line {line!r}") from exc
            if node.object_type is ObjectType.REVISION:
                nodes[node] = date
        if swhid not in nodes:
            raise TransportError(f"graph visit did not include its start node {swhid}")
        return nodes

    def walk_parents(
        self,
        swhid: SWHID,
        fetch: Callable[[SWHID], RevisionMeta] | None = None,
    ) -> list[SWHID]:
        """Same result as :meth:`history`, one revision request per commit."""
        _expect(swhid, ObjectType.REVISION)
        fetch = fetch or self.get_revision
        start = fetch(swhid)
        dates: dict[SWHID, datetime | None] = {}
        seen = {swhid}
        frontier = list(start.parents)
        while frontier:
            node = frontier.pop()
            if node in seen:
                continue
            seen.add(node)
            meta = fetch(node)
            dates[node] = meta.committer_date
            frontier.extend(p for p in meta.parents if p not in seen)
        return sort_history(dates.items())


def sort_visits(visits) -> list[OriginVisit]:
    return sorted(visits, key=lambda v: (v.date, v.visit))


def _retry_after(resp: requests.Response) -> float | None:
    value = resp.headers.get("Retry-After")
    if value is None:
        return None
    try:
        return max(0.0, float(value))
    except ValueError:
        return None
