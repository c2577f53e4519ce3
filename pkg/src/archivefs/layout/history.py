"""History summary views under ``archive/<rev>/history/``.

``by-page`` and ``by-hash`` only need the ancestor list. ``by-date`` needs
every ancestor's committer date, so it is filled by a background population
and shows a ``.status`` file (``done/total``) until it is complete.
"""

from __future__ import annotations

import logging
import threading
from collections import defaultdict
from dataclasses import dataclass
from typing import TYPE_CHECKING, Iterator

from archivefs.layout.nodes import NEVER, StaticFile, VNode, archive_link, utc_date
from archivefs.swhid import SWHID, shard_prefix

if TYPE_CHECKING:
    from archivefs.backend import Backend

log = logging.getLogger(__name__)

PAGE_SIZE = 10_000
STATUS_FILE = b".status"

DateKey = tuple[int, int, int]


class ByDatePopulation:
    """Fetches committer dates of a revision's ancestors in the background."""

    def __init__(self, backend: Backend, rev: SWHID, history: list[SWHID], parallelism: int = 8) -> None:
        self.backend = backend
        self.rev = rev
        self.history = history
        self.total = len(history)
        self.parallelism = parallelism
        self.buckets: dict[DateKey, list[SWHID]] = defaultdict(list)
        self._placed: set[SWHID] = set()
        self._failed: set[SWHID] = set()
        self._lock = threading.Lock()
        self._finished = threading.Event()
        self._running = False

    @property
    def done(self) -> int:
        with self._lock:
            return len(self._placed)

    @property
    def complete(self) -> bool:
        with self._lock:
            return len(self._placed) == self.total

    def status(self) -> bytes:
        return f"{self.done}/{self.total}\n".encode()

    def start(self) -> None:
        """Start (or resume after failures) the population; no-op while running."""
        with self._lock:
            if self._running or len(self._placed) == self.total:
                if len(self._placed) == self.total:
                    self._finished.set()
                return
            todo = [s for s in self.history if s not in self._placed]
            self._failed.clear()
            self._running = True
            self._finished.clear()
        threading.Thread(target=self._run, args=(todo,), daemon=True,
                         name=f"by-date-{self.rev.hash[:8]}").start()

    def _run(self, todo: list[SWHID]) -> None:
        gate = threading.Semaphore(self.parallelism)
        remaining = [len(todo)]
        if not todo:
            self._finish()
            return

        def fetch(swhid: SWHID) -> None:
            try:
                meta = self.backend.revision(swhid)
                d = utc_date(meta.committer_date)
                with self._lock:
                    if swhid not in self._placed:
                        self.buckets[(d.year, d.month, d.day)].append(swhid)
                        self._placed.add(swhid)
            except Exception as exc:
                log.debug("by-date: cannot fetch %s: %s", swhid, exc)
                with self._lock:
                    self._failed.add(swhid)
            finally:
                gate.release()
                with self._lock:
                    remaining[0] -= 1
                    last = remaining[0] == 0
                if last:
                    self._finish()

        for swhid in todo:
            gate.acquire()
            try:
                self.backend.pool.submit(fetch, swhid)
            except RuntimeError:  # pool shut down
                gate.release()
                with self._lock:
                    self._failed.add(swhid)
                    remaining[0] -= 1
                    last = remaining[0] == 0
                if last:
                    self._finish()

    def _finish(self) -> None:
        with self._lock:
            self._running = False
            if self._failed:
                log.warning("by-date view of %s incomplete: %d commits unavailable", self.rev, len(self._failed))
        self._finished.set()

    def wait(self, timeout: float | None = None) -> bool:
        """Block until the current run ends; True if the view is complete."""
        self._finished.wait(timeout)
        return self.complete

    def snapshot(self) -> dict[DateKey, list[SWHID]]:
        with self._lock:
            return {k: list(v) for k, v in self.buckets.items()}


@dataclass(eq=False)
class HistoryDir(VNode):
    def children(self) -> Iterator[VNode]:
        yield self.child(ByDateDir, b"by-date", swhid=self.swhid, ttl=NEVER)
        yield self.child(ByHashDir, b"by-hash", swhid=self.swhid)
        yield self.child(ByPageDir, b"by-page", swhid=self.swhid)


@dataclass(eq=False)
class ByPageDir(VNode):
    def children(self) -> Iterator[VNode]:
        history = self.backend.history(self.swhid)
        pages = (len(history) + PAGE_SIZE - 1) // PAGE_SIZE
        for i in range(pages):
            yield self.child(PageDir, f"{i:03d}".encode(), swhid=self.swhid, page=i)


@dataclass(eq=False)
class PageDir(VNode):
    page: int = 0

    @property
    def cacheable(self) -> bool:
        return False  # up to PAGE_SIZE symlinks; cheap to rebuild from the cached list

    def children(self) -> Iterator[VNode]:
        history = self.backend.history(self.swhid)
        for swhid in history[self.page * PAGE_SIZE:(self.page + 1) * PAGE_SIZE]:
            yield archive_link(self, str(swhid).encode(), swhid)

    def lookup(self, name: bytes) -> VNode | None:
        history = self.backend.history(self.swhid)
        window = history[self.page * PAGE_SIZE:(self.page + 1) * PAGE_SIZE]
        for swhid in window:
            if str(swhid).encode() == name:
                return archive_link(self, name, swhid)
        return None


@dataclass(eq=False)
class ByHashDir(VNode):
    def children(self) -> Iterator[VNode]:
        shards = sorted({shard_prefix(s) for s in self.backend.history(self.swhid)})
        for prefix in shards:
            yield self.child(HashShardDir, prefix.encode(), swhid=self.swhid, prefix=prefix)


@dataclass(eq=False)
class HashShardDir(VNode):
    prefix: str = ""

    def children(self) -> Iterator[VNode]:
        members = sorted(s for s in self.backend.history(self.swhid) if shard_prefix(s) == self.prefix)
        for swhid in members:
            yield archive_link(self, str(swhid).encode(), swhid)


@dataclass(eq=False)
class ByDateDir(VNode):
    """``YYYY/MM/DD/<swhid>`` links; grows while the population runs."""

    def population(self) -> ByDatePopulation:
        return self.layout.population(self.swhid)

    def children(self) -> Iterator[VNode]:
        pop = self.population()
        buckets = pop.snapshot()
        if not pop.complete:
            yield self.child(StaticFile, STATUS_FILE, data=pop.status(), ttl=NEVER, direct_io=True)
        for year in sorted({k[0] for k in buckets}):
            yield self.child(DateDir, f"{year:04d}".encode(), swhid=self.swhid,
                             key=(year,), ttl=NEVER)


@dataclass(eq=False)
class DateDir(VNode):
    key: tuple[int, ...] = ()

    def children(self) -> Iterator[VNode]:
        pop = self.layout.population(self.swhid)
        buckets = pop.snapshot()
        depth = len(self.key)
        if depth == 3:
            for swhid in sorted(buckets.get(self.key, ())):  # type: ignore[arg-type]
                yield archive_link(self, str(swhid).encode(), swhid, ttl=NEVER)
            return
        below = sorted({k[depth] for k in buckets if k[:depth] == self.key})
        for value in below:
            yield self.child(DateDir, f"{value:02d}".encode(), swhid=self.swhid,
                             key=self.key + (value,), ttl=NEVER)
