from __future__ import annotations

import logging
import threading
from typing import Iterable, Iterator, Sequence

from archivefs.backend import Backend
from archivefs.layout import paths
from archivefs.layout.history import ByDatePopulation, HistoryDir
from archivefs.layout.nodes import (
    ArchivedSymlink,
    CacheShard,
    ContentFile,
    DirectoryNode,
    NoEntry,
    NotADirectory,
    NodeKind,
    ParentsDir,
    ReleaseNode,
    RevisionNode,
    Root,
    SnapshotNode,
    Symlink,
    VisitDir,
    VNode,
    archive_link,
    _ts,
    utc_date,
)
from archivefs.layout.paths import Path, relative_target
from archivefs.model import AliasError, DirEntry, OriginVisit, Perm, RevisionMeta, SnapshotBranches
from archivefs.swhid import SWHID, ObjectType, shard_prefix

log = logging.getLogger(__name__)


class Layout:
    """Maps mount paths to :class:`VNode` objects backed by the archive."""

    def __init__(self, backend: Backend) -> None:
        self.backend = backend
        self.direntries = backend.direntries
        self._populations: dict[SWHID, ByDatePopulation] = {}
        self._pop_lock = threading.Lock()

    def root(self) -> Root:
        return Root(layout=self, path=())

    # -- navigation ------------------------------------------------------

    def children(self, node: VNode) -> Iterator[VNode]:
        """Children of a directory node, served from the direntry cache when possible."""
        if node.kind is not NodeKind.DIRECTORY:
            raise NotADirectory(paths.join(node.path))
        if not node.cacheable:
            return node.children()
        key = ("path", node.path)
        cached = self.direntries.get(key)
        if cached is None:
            cached = tuple(node.children())
            self.direntries.put(key, cached)
        return iter(cached)

    def lookup(self, node: VNode, name: bytes) -> VNode:
        if node.kind is not NodeKind.DIRECTORY:
            raise NotADirectory(paths.join(node.path))
        if name in (b"", b".", b"..") or b"/" in name:
            raise NoEntry(paths.join(node.path + (name,)))
        child = node.lookup(name)
        if child is None:
            raise NoEntry(paths.join(node.path + (name,)))
        return child

    def resolve(self, path: Sequence[bytes | str]) -> VNode:
        """Walk ``path`` from the mount root without following symlinks.

        Raises :class:`NoEntry` for missing components (including malformed
        identifiers); transport errors with a cold cache propagate.
        """
        node: VNode = self.root()
        for name in path:
            if isinstance(name, str):
                name = name.encode("utf-8", "surrogateescape")
            node = self.lookup(node, name)
        return node

    def listdir(self, path: Sequence[bytes | str]) -> list[bytes]:
        return [n.name for n in self.children(self.resolve(path))]

    # -- object renderings ------------------------------------------------

    def object_node(self, parent: VNode, name: bytes, swhid: SWHID) -> VNode:
        """Node for ``archive/<swhid>``; raises NotFound for unknown objects."""
        t = swhid.object_type
        if t is ObjectType.CONTENT:
            return parent.child(ContentFile, name, swhid=swhid, length=self.backend.content_length(swhid))
        self.backend.exists(swhid)
        if t is ObjectType.DIRECTORY:
            return parent.child(DirectoryNode, name, swhid=swhid)
        if t is ObjectType.REVISION:
            meta = self.backend.revision(swhid)
            return parent.child(RevisionNode, name, swhid=swhid, mtime=_ts(meta.committer_date))
        if t is ObjectType.RELEASE:
            meta = self.backend.release(swhid)
            return parent.child(ReleaseNode, name, swhid=swhid, mtime=_ts(meta.date))
        return parent.child(SnapshotNode, name, swhid=swhid)

    def entry_node(self, parent: VNode, entry: DirEntry) -> VNode:
        perm = entry.perm
        if perm is Perm.SUBDIRECTORY:
            return parent.child(DirectoryNode, entry.name, swhid=entry.target)
        if perm is Perm.SUBMODULE_REVISION:
            return archive_link(parent, entry.name, entry.target)
        if perm is Perm.SYMLINK:
            return parent.child(ArchivedSymlink, entry.name, swhid=entry.target, length=entry.length)
        mode = 0o555 if perm is Perm.EXECUTABLE_FILE else 0o444
        return parent.child(ContentFile, entry.name, swhid=entry.target, perm=mode, length=entry.length)

    def render_directory(self, node: VNode, entries: Iterable[DirEntry]) -> list[VNode]:
        return [self.entry_node(node, e) for e in entries]

    def render_revision(self, node: VNode, meta: RevisionMeta) -> list[VNode]:
        out: list[VNode] = [
            node.child(HistoryDir, b"history", swhid=meta.id),
            archive_link(node, b"meta.json", meta.id, paths.JSON_SUFFIX),
        ]
        if meta.parents:
            out.append(node.child(Symlink, b"parent", link=b"parents/1"))
        out.append(node.child(ParentsDir, b"parents", parents=tuple(meta.parents)))
        out.append(archive_link(node, b"root", meta.tree))
        return out

    def render_snapshot(self, node: VNode, snapshot: SnapshotBranches, prefix: tuple[bytes, ...] = ()) -> list[VNode]:
        """Entries of the snapshot directory at branch-name ``prefix``."""
        depth = len(prefix)
        leaves: dict[bytes, VNode] = {}
        subdirs: set[bytes] = set()
        for name, target in snapshot.branches.items():
            parts = _branch_parts(name)
            if parts is None or parts[:depth] != prefix or len(parts) == depth:
                continue
            if len(parts) > depth + 1:
                subdirs.add(parts[depth])
            else:
                leaves[parts[depth]] = archive_link(node, parts[depth], target)
        for name, aliased in snapshot.aliases.items():
            parts = _branch_parts(name)
            if parts is None or parts[:depth] != prefix or len(parts) == depth:
                continue
            if len(parts) > depth + 1:
                subdirs.add(parts[depth])
                continue
            try:
                resolved = snapshot.resolve_alias(name)
            except AliasError as exc:
                log.info("snapshot %s: skipping alias %r: %s", snapshot.id, name, exc)
                continue
            target_parts = _branch_parts(aliased)
            if target_parts is None or _branch_parts(resolved) is None:
                continue
            link = relative_target(prefix, target_parts)
            leaves[parts[depth]] = node.child(Symlink, parts[depth], link=link)
        out: list[VNode] = []
        for name in sorted(subdirs | set(leaves)):
            if name in subdirs:
                if name in leaves:
                    log.info("snapshot %s: branch %r shadowed by a directory", snapshot.id, name)
                out.append(node.child(SnapshotNode, name, swhid=snapshot.id, prefix=prefix + (name,)))
            else:
                out.append(leaves[name])
        return out

    def render_origin(self, node: VNode, visits: Sequence[OriginVisit]) -> list[VNode]:
        out: list[VNode] = []
        used: dict[bytes, int] = {}
        for visit in visits:
            if visit.snapshot is None:
                continue
            day = utc_date(visit.date).strftime("%Y-%m-%d").encode()
            n = used.get(day, 0) + 1
            used[day] = n
            name = day if n == 1 else day + b".%d" % n
            out.append(node.child(VisitDir, name, visit=visit, ttl=node.ttl, mtime=visit.date.timestamp()))
        return out

    def render_cache_root(self, node: VNode) -> list[VNode]:
        prefixes = sorted({shard_prefix(s) for s in self.backend.cache.cached_swhids()})
        return [node.child(CacheShard, p.encode(), prefix=p, ttl=node.ttl) for p in prefixes]

    # -- history -----------------------------------------------------------

    def population(self, rev: SWHID) -> ByDatePopulation:
        with self._pop_lock:
            pop = self._populations.get(rev)
        if pop is None:
            history = self.backend.history(rev)
            with self._pop_lock:
                pop = self._populations.setdefault(rev, ByDatePopulation(self.backend, rev, history))
        pop.start()
        return pop

    def history_views(self, rev: SWHID) -> dict[str, VNode]:
        """The three history view directories of ``archive/<rev>/history``."""
        node = self.resolve(paths.archive_path(rev) + (b"history",))
        return {n.name.decode(): n for n in self.children(node)}

    def forget_object(self, swhid: SWHID) -> None:
        """Drop in-memory state derived from ``swhid`` (after a cache purge)."""
        self.direntries.pop(("dir", swhid))
        with self._pop_lock:
            self._populations.pop(swhid, None)
        for key in list(self.direntries.keys()):
            if key[0] == "path" and len(key[1]) > 1 and key[1][1] == str(swhid).encode():
                self.direntries.pop(key)

    def forget_all(self) -> None:
        self.direntries.clear()
        with self._pop_lock:
            self._populations.clear()


def _branch_parts(name: bytes) -> tuple[bytes, ...] | None:
    parts = tuple(name.split(b"/"))
    if any(p in (b"", b".", b"..") or b"\0" in p for p in parts):
        return None
    return parts


def relative_symlink(from_dir: Path, to_swhid: SWHID) -> str:
    return paths.relative_symlink(from_dir, to_swhid).decode()

