"""Cached access to archive objects for the layout engine.

Every lookup goes cache-first. Directory listings are materialized one server
page at a time, so the first entries of a huge directory are available after
a single request. Blobs are streamed to a spool file by a background thread
while readers wait only for the byte range they asked for.
"""

from __future__ import annotations

import json
import logging
import tempfile
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from typing import Any, Callable, Iterator

from archivefs.cache import (
    DirEntryCache,
    Kind,
    LRUCache,
    PersistentCache,
    history_key,
    origin_key,
)
from archivefs.client import ArchiveClient, NotFound, TransportError, sort_visits
from archivefs.model import DirEntry, OriginVisit, ReleaseMeta, RevisionMeta, SnapshotBranches
from archivefs.swhid import SWHID, ObjectType, parse_swhid

log = logging.getLogger(__name__)

VISITS_FRESHNESS = 60.0


def encode_document(doc: Any) -> bytes:
    return json.dumps(doc, sort_keys=True, separators=(",", ":"), ensure_ascii=True).encode()


def render_document(doc: Any) -> bytes:
    """Pretty JSON for ``*.json`` files; undecodable name bytes are written raw."""
    text = json.dumps(doc, indent=2, sort_keys=True, ensure_ascii=False)
    return (text + "\n").encode("utf-8", "surrogateescape")


class Listing:
    """Directory entries of one ``dir`` object, fetched page by page on demand."""

    def __init__(self, swhid: SWHID, pages: Iterator[list[dict]] | None,
                 on_complete: Callable[[Listing], None] | None = None,
                 docs: list[dict] | None = None,
                 on_error: Callable[[Listing], None] | None = None) -> None:
        self.swhid = swhid
        self.entries: list[DirEntry] = []
        self.docs: list[dict] = []
        self._by_name: dict[bytes, DirEntry] = {}
        self._pages = pages
        self._on_complete = on_complete
        self._on_error = on_error
        self.error: Exception | None = None
        self._lock = threading.Lock()
        self.pages_fetched = 0
        self.complete = pages is None
        if docs is not None:
            self._add(docs)

    def _add(self, docs: list[dict]) -> None:
        for doc in docs:
            entry = DirEntry.from_dict(doc)
            if entry.name in self._by_name:
                log.warning("duplicate entry %r in %s ignored", entry.name, self.swhid)
                continue
            self._by_name[entry.name] = entry
            self.entries.append(entry)
            self.docs.append(doc)

    def _fetch_page(self) -> None:
        # caller holds the lock
        if self.error is not None:
            # the page iterator died with the first failure; never treat it as exhausted
            raise TransportError(f"listing of {self.swhid} failed earlier: {self.error}")
        try:
            page = next(self._pages)
        except StopIteration:
            self._finish()
            return
        except Exception as exc:
            self.error = exc
            if self._on_error:
                self._on_error(self)
            raise
        self.pages_fetched += 1
        self._add(page)
        if getattr(self._pages, "done", False):
            self._finish()

    def _finish(self) -> None:
        self.complete = True
        self._pages = None
        if self._on_complete:
            self._on_complete(self)

    def ensure(self, n: int) -> int:
        """Fetch pages until at least ``n`` entries are known or the listing ends."""
        with self._lock:
            while len(self.entries) < n and not self.complete:
                self._fetch_page()
            return len(self.entries)

    def started(self) -> None:
        """Fetch the first page (existence probe)."""
        with self._lock:
            if self.pages_fetched == 0 and not self.complete:
                self._fetch_page()

    def find(self, name: bytes) -> DirEntry | None:
        with self._lock:
            while name not in self._by_name and not self.complete:
                self._fetch_page()
            return self._by_name.get(name)

    def all(self) -> list[DirEntry]:
        self.ensure(float("inf"))  # type: ignore[arg-type]
        return list(self.entries)

    def __iter__(self) -> Iterator[DirEntry]:
        i = 0
        while True:
            if i >= len(self.entries) and self.ensure(i + 1) <= i:
                return
            yield self.entries[i]
            i += 1


class BlobReader:
    """Random-access reader over a content object."""

    size: int

    def read(self, offset: int, size: int) -> bytes:
        raise NotImplementedError

    def close(self) -> None:
        pass


class MemoryBlob(BlobReader):
    def __init__(self, data: bytes) -> None:
        self.data = data
        self.size = len(data)

    def read(self, offset: int, size: int) -> bytes:
        return self.data[offset:offset + size]


class StreamingBlob(BlobReader):
    """A download in progress, shared by every handle opened meanwhile."""

    def __init__(self, backend: Backend, swhid: SWHID, length: int | None) -> None:
        self.backend = backend
        self.swhid = swhid
        self.size = length if length is not None else 0
        self._spool = tempfile.SpooledTemporaryFile(max_size=8 * 1024 * 1024)
        self._available = 0
        self._done = False
        self._error: Exception | None = None
        self._refs = 0
        self._settled = False  # set once the backend has taken what it needs
        self._opened = threading.Event()
        self._open_error: BaseException | None = None
        self._cond = threading.Condition()

    def fail_open(self, exc: BaseException) -> None:
        with self._cond:
            self._open_error = exc
            self._done = self._settled = True
        self._opened.set()

    def wait_opened(self) -> None:
        self._opened.wait()
        if self._open_error is not None:
            raise self._open_error

    def start(self, body) -> None:
        if body.length is not None:
            self.size = body.length
        self._opened.set()
        threading.Thread(target=self._download, args=(body,), daemon=True,
                         name=f"blob-{self.swhid.hash[:8]}").start()

    def _download(self, body) -> None:
        try:
            for chunk in body:
                with self._cond:
                    self._spool.seek(self._available)
                    self._spool.write(chunk)
                    self._available += len(chunk)
                    self._cond.notify_all()
        except Exception as exc:
            log.warning("download of %s failed: %s", self.swhid, exc)
            with self._cond:
                self._error = exc
        finally:
            with self._cond:
                self._done = True
                self.size = max(self.size, self._available) if self._error is None else self.size
                self._cond.notify_all()
            self.backend._download_finished(self)

    def acquire(self) -> StreamingBlob:
        with self._cond:
            self._refs += 1
        return self

    def read(self, offset: int, size: int) -> bytes:
        end = offset + size
        with self._cond:
            while self._available < end and not self._done:
                self._cond.wait()
            if self._error is not None and self._available < end:
                raise TransportError(f"{self.swhid}: {self._error}")
            self._spool.seek(offset)
            return self._spool.read(max(0, min(end, self._available) - offset))

    def contents(self) -> bytes | None:
        with self._cond:
            if not self._done or self._error is not None:
                return None
            self._spool.seek(0)
            return self._spool.read()

    def close(self) -> None:
        with self._cond:
            self._refs -= 1
            if self._refs <= 0 and self._settled:
                self._spool.close()


class Backend:
    def __init__(
        self,
        client: ArchiveClient,
        cache: PersistentCache,
        direntries: DirEntryCache | None = None,
        workers: int = 8,
    ) -> None:
        self.client = client
        self.cache = cache
        self.direntries = direntries if direntries is not None else DirEntryCache()
        self.pool = ThreadPoolExecutor(max_workers=workers, thread_name_prefix="archivefs-fetch")
        self._downloads: dict[SWHID, StreamingBlob] = {}
        self._downloads_lock = threading.Lock()
        self._visits_checked: dict[str, float] = {}
        # parsed history lists; every view listing needs one and they never change
        self._histories: LRUCache = LRUCache(32)

    def close(self) -> None:
        self.pool.shutdown(wait=False, cancel_futures=True)

    # -- metadata ----------------------------------------------------------

    def metadata(self, swhid: SWHID) -> Any:
        """Metadata document of ``swhid``, fetched once then served from cache."""
        raw = self.cache.get(Kind.METADATA, str(swhid))
        if raw is not None:
            return json.loads(raw)
        doc = self.client.document(swhid)
        self.cache.put(Kind.METADATA, str(swhid), encode_document(doc))
        return doc

    def is_cached(self, swhid: SWHID) -> bool:
        if self.cache.get(Kind.METADATA, str(swhid)) is not None:
            return True
        return swhid.object_type is ObjectType.CONTENT and self.cache.get(Kind.BLOB, str(swhid)) is not None

    def revision(self, swhid: SWHID) -> RevisionMeta:
        return RevisionMeta.from_dict(self.metadata(swhid))

    def release(self, swhid: SWHID) -> ReleaseMeta:
        return ReleaseMeta.from_dict(self.metadata(swhid))

    def snapshot(self, swhid: SWHID) -> SnapshotBranches:
        return SnapshotBranches.from_dict(self.metadata(swhid))

    def content_length(self, swhid: SWHID) -> int:
        blob = self.cache.get(Kind.BLOB, str(swhid))
        if blob is not None:
            return len(blob)
        return int(self.metadata(swhid)["length"])

    def exists(self, swhid: SWHID) -> None:
        """Raise :class:`NotFound` unless ``swhid`` is in the archive."""
        if swhid.object_type is ObjectType.DIRECTORY:
            self.listing(swhid).started()
        else:
            self.metadata(swhid)

    # -- directories -------------------------------------------------------

    def listing(self, swhid: SWHID) -> Listing:
        key = ("dir", swhid)
        listing = self.direntries.get(key)
        if listing is not None:
            return listing
        raw = self.cache.get(Kind.METADATA, str(swhid))
        if raw is not None:
            listing = Listing(swhid, None, docs=json.loads(raw))
        else:
            listing = Listing(swhid, self.client.directory_pages(swhid), self._listing_complete,
                              on_error=self._listing_failed)
        self.direntries.put(key, listing)
        return listing

    def _listing_complete(self, listing: Listing) -> None:
        try:
            self.cache.put(Kind.METADATA, str(listing.swhid), encode_document(listing.docs))
        except Exception:
            log.exception("could not cache listing of %s", listing.swhid)

    def _listing_failed(self, listing: Listing) -> None:
        key = ("dir", listing.swhid)
        if self.direntries.get(key) is listing:
            self.direntries.pop(key)

    def directory_entries(self, swhid: SWHID) -> list[DirEntry]:
        return self.listing(swhid).all()

    # -- blobs -------------------------------------------------------------

    def open_blob(self, swhid: SWHID) -> BlobReader:
        """Reader over a blob: from the cache, or a shared in-flight download.

        Only the first opener issues the request; concurrent openers wait for
        its response headers and then share the same spool.
        """
        data = self.cache.get(Kind.BLOB, str(swhid))
        if data is not None:
            return MemoryBlob(data)
        with self._downloads_lock:
            stream = self._downloads.get(swhid)
            owner = stream is None
            if owner:
                stream = StreamingBlob(self, swhid, None)
                self._downloads[swhid] = stream
            stream.acquire()
        if not owner:
            try:
                stream.wait_opened()
            except BaseException:
                stream.close()
                raise
            return stream
        try:
            blob = self.client.open_blob(swhid)
        except BaseException as exc:
            with self._downloads_lock:
                if self._downloads.get(swhid) is stream:
                    del self._downloads[swhid]
            stream.fail_open(exc)
            stream.close()
            raise
        stream.start(blob)
        return stream

    def _download_finished(self, stream: StreamingBlob) -> None:
        with self._downloads_lock:
            if self._downloads.get(stream.swhid) is stream:
                del self._downloads[stream.swhid]
        data = stream.contents()
        if data is not None:
            try:
                self.cache.put(Kind.BLOB, str(stream.swhid), data)
            except Exception:
                log.exception("could not cache blob %s", stream.swhid)
        with stream._cond:
            stream._settled = True
            if stream._refs <= 0:
                stream._spool.close()

    def blob(self, swhid: SWHID) -> bytes:
        reader = self.open_blob(swhid)
        try:
            if isinstance(reader, MemoryBlob):
                return reader.data
            chunks, offset = [], 0
            while True:
                chunk = reader.read(offset, 1 << 20)
                if not chunk:
                    return b"".join(chunks)
                chunks.append(chunk)
                offset += len(chunk)
        finally:
            reader.close()

    # -- origins -----------------------------------------------------------

    def visits(self, url: str) -> list[OriginVisit]:
        """Visits of ``url``; refreshed online at most once a minute, cached otherwise."""
        key = origin_key(url)
        cached = self.cache.get(Kind.METADATA, key)
        fresh = time.monotonic() - self._visits_checked.get(url, -VISITS_FRESHNESS) < VISITS_FRESHNESS
        if cached is None or not fresh:
            try:
                docs = self.client.origin_visits_document(url)
            except TransportError:
                if cached is None:
                    raise
                log.info("using cached visits of %s", url)
            else:
                self._visits_checked[url] = time.monotonic()
                self.cache.put(Kind.METADATA, key, encode_document(docs))
                cached = encode_document(docs)
        return sort_visits(OriginVisit.from_dict(d) for d in json.loads(cached))

    def origins(self) -> list[str]:
        return sorted(self.cache.cached_origins())

    # -- history -----------------------------------------------------------

    def history(self, swhid: SWHID) -> list[SWHID]:
        """Ancestors of ``swhid`` in git-log order (a shared list; do not mutate)."""
        result = self._histories.get(swhid)
        if result is not None:
            return result
        key = history_key(swhid)
        raw = self.cache.get(Kind.METADATA, key)
        if raw is not None:
            result = [parse_swhid(s) for s in json.loads(raw)]
        else:
            result = self.client.history(swhid, fetch=self.revision)
            self.cache.put(Kind.METADATA, key, encode_document([str(s) for s in result]))
        self._histories.put(swhid, result)
        return result


__all__ = [
    "Backend", "BlobReader", "Listing", "MemoryBlob", "NotFound", "StreamingBlob",
    "TransportError", "encode_document", "render_document",
]
