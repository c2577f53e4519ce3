"""Persistent blob/metadata caches and the in-memory direntry cache.

Archive objects are immutable, so cached records never need invalidation:
any record can be dropped at any time and will simply be fetched again.
Origin visit lists are the exception (new visits appear) and are refreshed
whenever the archive is reachable.
"""

from __future__ import annotations

import enum
import hashlib
import logging
import sqlite3
import threading
import time
from collections import OrderedDict
from datetime import datetime
from pathlib import Path
from typing import Callable, Generic, Hashable, Iterator, TypeVar

from archivefs.swhid import SWHID, ObjectType, SWHIDError, parse_swhid

log = logging.getLogger(__name__)

DEFAULT_BLOB_SIZE_LIMIT = 64 * 1024 * 1024
DEFAULT_DIRENTRY_CAPACITY = 10_000

ORIGIN_PREFIX = "origin:"
HISTORY_PREFIX = "history:"


class Kind(str, enum.Enum):
    BLOB = "blob"
    METADATA = "metadata"


class StorageError(Exception):
    """The cache database could not be read or written."""


class CacheConsistencyError(StorageError):
    """Two different payloads were stored under one immutable key."""


def origin_key(url: str) -> str:
    return ORIGIN_PREFIX + url


def history_key(swhid: SWHID) -> str:
    return HISTORY_PREFIX + str(swhid)


def check_key(kind: Kind, key: str) -> None:
    """Reject keys that are not canonical for ``kind``."""
    if kind is Kind.BLOB:
        try:
            swhid = parse_swhid(key)
        except SWHIDError as exc:
            raise ValueError(f"blob key must be a content SWHID: {exc}") from None
        if swhid.object_type is not ObjectType.CONTENT:
            raise ValueError(f"blob key must be a content SWHID, got {key}")
        return
    if key.startswith(ORIGIN_PREFIX):
        if len(key) == len(ORIGIN_PREFIX):
            raise ValueError("empty origin key")
        return
    if key.startswith(HISTORY_PREFIX):
        key = key[len(HISTORY_PREFIX):]
    try:
        parse_swhid(key)
    except SWHIDError as exc:
        raise ValueError(f"metadata key is not canonical: {exc}") from None


def _mutable(key: str) -> bool:
    return key.startswith(ORIGIN_PREFIX)


def _timestamp(t: datetime | float) -> float:
    return t.timestamp() if isinstance(t, datetime) else float(t)


class SqliteStore:
    """Single-file key/value table: ``key -> (payload, length, inserted_at)``."""

    def __init__(self, path: Path | str, clock: Callable[[], float] = time.time) -> None:
        self.path = Path(path)
        self.clock = clock
        self._lock = threading.Lock()
        try:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self._conn = sqlite3.connect(str(self.path), check_same_thread=False, isolation_level=None)
            self._conn.execute("PRAGMA journal_mode = WAL")
            self._conn.execute("PRAGMA synchronous = NORMAL")
            self._conn.execute(
                """CREATE TABLE IF NOT EXISTS records (
                       key         TEXT PRIMARY KEY NOT NULL,
                       payload     BLOB NOT NULL,
                       length      INTEGER NOT NULL,
                       inserted_at REAL NOT NULL
                   )"""
            )
            self._conn.execute("CREATE INDEX IF NOT EXISTS records_time ON records(inserted_at)")
        except (sqlite3.Error, OSError) as exc:
            raise StorageError(f"cannot open cache database {self.path}: {exc}") from exc

    def _run(self, sql: str, args: tuple = ()) -> list[tuple]:
        with self._lock:
            try:
                return self._conn.execute(sql, args).fetchall()
            except sqlite3.Error as exc:
                raise StorageError(f"{self.path}: {exc}") from exc

    def get(self, key: str) -> bytes | None:
        rows = self._run("SELECT payload, length FROM records WHERE key = ?", (key,))
        if not rows:
            return None
        payload, length = rows[0]
        payload = bytes(payload)
        if len(payload) != length:
            log.warning("dropping corrupt cache record %s (%d != %d bytes)", key, len(payload), length)
            self.delete(key)
            return None
        return payload

    def insert(self, key: str, payload: bytes, replace: bool = False) -> bool:
        """Store ``payload``; returns False when ``key`` was already present."""
        verb = "INSERT OR REPLACE" if replace else "INSERT OR IGNORE"
        with self._lock:
            try:
                cur = self._conn.execute(
                    f"{verb} INTO records (key, payload, length, inserted_at) VALUES (?, ?, ?, ?)",
                    (key, sqlite3.Binary(payload), len(payload), self.clock()),
                )
            except sqlite3.Error as exc:
                raise StorageError(f"{self.path}: {exc}") from exc
            return cur.rowcount > 0

    def delete(self, key: str) -> int:
        with self._lock:
            try:
                return self._conn.execute("DELETE FROM records WHERE key = ?", (key,)).rowcount
            except sqlite3.Error as exc:
                raise StorageError(f"{self.path}: {exc}") from exc

    def purge(self, before: float | None = None) -> int:
        with self._lock:
            try:
                if before is None:
                    return self._conn.execute("DELETE FROM records").rowcount
                return self._conn.execute("DELETE FROM records WHERE inserted_at < ?", (before,)).rowcount
            except sqlite3.Error as exc:
                raise StorageError(f"{self.path}: {exc}") from exc

    def keys(self) -> list[str]:
        return [k for (k,) in self._run("SELECT key FROM records ORDER BY key")]

    def inserted_at(self, key: str) -> float | None:
        rows = self._run("SELECT inserted_at FROM records WHERE key = ?", (key,))
        return rows[0][0] if rows else None

    def __len__(self) -> int:
        return self._run("SELECT COUNT(*) FROM records")[0][0]

    def close(self) -> None:
        with self._lock:
            self._conn.close()


class PersistentCache:
    """Blob and metadata caches living side by side in ``cache_dir``.

    ``debug=True`` compares payload hashes on every overwrite of an immutable
    key and raises :class:`CacheConsistencyError` on mismatch.
    """

    def __init__(
        self,
        cache_dir: Path | str,
        blob_size_limit: int = DEFAULT_BLOB_SIZE_LIMIT,
        debug: bool = False,
        clock: Callable[[], float] = time.time,
    ) -> None:
        self.cache_dir = Path(cache_dir)
        self.blob_size_limit = blob_size_limit
        self.debug = debug
        self._stores = {
            Kind.BLOB: SqliteStore(self.cache_dir / "blob.sqlite", clock),
            Kind.METADATA: SqliteStore(self.cache_dir / "metadata.sqlite", clock),
        }

    def store(self, kind: Kind) -> SqliteStore:
        return self._stores[Kind(kind)]

    def get(self, kind: Kind, key: str) -> bytes | None:
        """Cached payload, or None on a miss."""
        kind = Kind(kind)
        check_key(kind, key)
        return self._stores[kind].get(key)

    def put(self, kind: Kind, key: str, payload: bytes) -> bool:
        """Store a record; returns False when it was not admitted or already present."""
        kind = Kind(kind)
        check_key(kind, key)
        if kind is Kind.BLOB and len(payload) > self.blob_size_limit:
            log.debug("not caching %s: %d bytes exceeds limit", key, len(payload))
            return False
        store = self._stores[kind]
        if _mutable(key):
            return store.insert(key, payload, replace=True)
        added = store.insert(key, payload)
        if not added and self.debug:
            existing = store.get(key)
            if existing is not None and hashlib.sha1(existing).digest() != hashlib.sha1(payload).digest():
                raise CacheConsistencyError(f"conflicting payloads for immutable key {key}")
        return added

    def remove(self, key: str) -> int:
        """Drop every record stored under ``key`` (both kinds)."""
        return sum(store.delete(key) for store in self._stores.values())

    def purge(self, before: datetime | float | None = None) -> int:
        """Remove all records, or those inserted strictly before ``before``."""
        cutoff = None if before is None else _timestamp(before)
        return sum(store.purge(cutoff) for store in self._stores.values())

    def cached_swhids(self) -> list[SWHID]:
        found = set()
        for store in self._stores.values():
            for key in store.keys():
                try:
                    found.add(parse_swhid(key))
                except SWHIDError:
                    continue
        return sorted(found, key=str)

    def cached_origins(self) -> list[str]:
        return [
            key[len(ORIGIN_PREFIX):]
            for key in self._stores[Kind.METADATA].keys()
            if key.startswith(ORIGIN_PREFIX)
        ]

    def close(self) -> None:
        for store in self._stores.values():
            store.close()


K = TypeVar("K", bound=Hashable)
V = TypeVar("V")


class LRUCache(Generic[K, V]):
    """Thread-safe bounded mapping evicting the least recently used key."""

    def __init__(self, capacity: int = DEFAULT_DIRENTRY_CAPACITY) -> None:
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self._data: OrderedDict[K, V] = OrderedDict()
        self._lock = threading.Lock()

    def get(self, key: K) -> V | None:
        with self._lock:
            try:
                self._data.move_to_end(key)
            except KeyError:
                return None
            return self._data[key]

    def put(self, key: K, value: V) -> None:
        with self._lock:
            self._data[key] = value
            self._data.move_to_end(key)
            while len(self._data) > self.capacity:
                self._data.popitem(last=False)

    def pop(self, key: K) -> V | None:
        with self._lock:
            return self._data.pop(key, None)

    def clear(self) -> None:
        with self._lock:
            self._data.clear()

    def __contains__(self, key: object) -> bool:
        with self._lock:
            return key in self._data

    def __len__(self) -> int:
        with self._lock:
            return len(self._data)

    def keys(self) -> Iterator[K]:
        with self._lock:
            return iter(list(self._data))


class DirEntryCache(LRUCache[Hashable, tuple]):
    """Maps a directory key to its rendered entry list."""

    def direntry_get(self, key: Hashable) -> tuple | None:
        return self.get(key)

    def direntry_put(self, key: Hashable, entries) -> None:
        self.put(key, tuple(entries))
