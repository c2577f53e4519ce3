"""Virtual filesystem nodes.

Each node knows its absolute path inside the mount, its attributes, and how
to produce its children, content or link target. Nodes are cheap to create;
expensive data comes from the :class:`~archivefs.backend.Backend`, which
caches it.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import TYPE_CHECKING, Iterator

from archivefs.backend import BlobReader, MemoryBlob, render_document
from archivefs.client import NotFound
from archivefs.model import DirEntry, OriginVisit, target_type_name
from archivefs.swhid import SWHID, ObjectType, SWHIDError, parse_swhid, shard_prefix
from archivefs.layout import paths
from archivefs.layout.paths import Path, relative_symlink

if TYPE_CHECKING:
    from archivefs.layout.engine import Layout

log = logging.getLogger(__name__)

FOREVER = 365 * 24 * 3600.0
NEVER = 0.0

README_TEXT = """\
archivefs: a read-only view of a content-addressed software archive
=================================================================

Entry points:

  archive/   look up any object by its identifier, e.g.
             cat archive/swh:1:cnt:c839dea9e8e6f0528b468214348fee8669b305b2
             cd  archive/swh:1:rev:<hash>/root
             Each object also has a sibling <identifier>.json with its metadata.
             This directory cannot be listed; entries appear on lookup.
  origin/    browse by archived repository URL; the URL must be
             percent-encoded, e.g. origin/https%3A%2F%2Fgithub.com%2Ftorvalds%2Flinux
  cache/     objects cached on local disk, sharded by the first two hex digits
             of their hash; removing an entry evicts it from the cache.

Commits expose root@, meta.json@, parent@, parents/ and history/
(by-page/, by-hash/, by-date/). Snapshots expose one entry per branch.

The full layout reference is docs/layout.md in the archivefs source tree.
"""


class NodeKind(enum.Enum):
    REGULAR = "regular"
    DIRECTORY = "directory"
    SYMLINK = "symlink"


class NoEntry(LookupError):
    """Path component does not exist (ENOENT)."""


class NotADirectory(LookupError):
    pass


class ReadOnly(PermissionError):
    pass


def utc_date(dt: datetime | None) -> datetime:
    return (dt or datetime(1970, 1, 1, tzinfo=timezone.utc)).astimezone(timezone.utc)


def _ts(dt: datetime | None) -> float:
    return dt.timestamp() if dt is not None else 0.0


@dataclass(eq=False)
class VNode:
    layout: Layout = field(repr=False)
    path: Path
    kind: NodeKind = NodeKind.DIRECTORY
    perm: int = 0o555
    mtime: float = 0.0
    swhid: SWHID | None = None
    ttl: float = FOREVER
    direct_io: bool = False

    @property
    def name(self) -> bytes:
        return self.path[-1] if self.path else b""

    @property
    def backend(self):
        return self.layout.backend

    @property
    def cacheable(self) -> bool:
        """Whether the child list may be kept in the direntry cache."""
        return self.ttl == FOREVER

    def child(self, cls, name: bytes, **kw) -> VNode:
        kw.setdefault("mtime", self.mtime)
        return cls(layout=self.layout, path=self.path + (name,), **kw)

    # regular files
    def size(self) -> int:
        if self.kind is NodeKind.SYMLINK:
            return len(self.target())
        if self.kind is NodeKind.REGULAR:
            return len(self.content())
        return 0

    def content(self) -> bytes:
        raise NotImplementedError

    def open(self) -> BlobReader:
        return MemoryBlob(self.content())

    # symlinks
    def target(self) -> bytes:
        raise NotImplementedError

    # directories
    def children(self) -> Iterator[VNode]:
        return iter(())

    def lookup(self, name: bytes) -> VNode | None:
        for node in self.layout.children(self):
            if node.name == name:
                return node
        return None

    def unlink(self, name: bytes) -> None:
        raise ReadOnly(paths.join(self.path + (name,)))


@dataclass(eq=False)
class StaticFile(VNode):
    kind: NodeKind = NodeKind.REGULAR
    perm: int = 0o444
    data: bytes = b""

    def content(self) -> bytes:
        return self.data


@dataclass(eq=False)
class Symlink(VNode):
    kind: NodeKind = NodeKind.SYMLINK
    perm: int = 0o444
    link: bytes = b""

    def target(self) -> bytes:
        return self.link


def archive_link(parent: VNode, name: bytes, swhid: SWHID, suffix: bytes = b"", **kw) -> Symlink:
    return parent.child(Symlink, name, link=relative_symlink(parent.path, swhid, suffix), swhid=swhid, **kw)


# -- mount root --------------------------------------------------------------

@dataclass(eq=False)
class Root(VNode):
    def children(self) -> Iterator[VNode]:
        yield self.child(ArchiveDir, paths.ARCHIVE)
        yield self.child(CacheDir, paths.CACHE, ttl=NEVER)
        yield self.child(OriginDir, paths.ORIGIN, ttl=NEVER)
        yield self.child(StaticFile, paths.README, data=README_TEXT.encode())


@dataclass(eq=False)
class ArchiveDir(VNode):
    """Unlistable; any identifier (or ``<identifier>.json``) resolves on lookup."""

    def lookup(self, name: bytes) -> VNode | None:
        json_file = name.endswith(paths.JSON_SUFFIX)
        raw = name[: -len(paths.JSON_SUFFIX)] if json_file else name
        try:
            swhid = parse_swhid(raw.decode("ascii"))
        except (UnicodeDecodeError, SWHIDError):
            return None
        try:
            if json_file:
                self.backend.metadata(swhid)
                return self.child(MetadataFile, name, swhid=swhid)
            return self.layout.object_node(self, name, swhid)
        except NotFound:
            return None


@dataclass(eq=False)
class MetadataFile(VNode):
    kind: NodeKind = NodeKind.REGULAR
    perm: int = 0o444

    def content(self) -> bytes:
        return render_document(self.backend.metadata(self.swhid))


@dataclass(eq=False)
class ContentFile(VNode):
    kind: NodeKind = NodeKind.REGULAR
    perm: int = 0o444
    length: int | None = None

    def size(self) -> int:
        if self.length is None:
            self.length = self.backend.content_length(self.swhid)
        return self.length

    def content(self) -> bytes:
        return self.backend.blob(self.swhid)

    def open(self) -> BlobReader:
        return self.backend.open_blob(self.swhid)


@dataclass(eq=False)
class ArchivedSymlink(VNode):
    """A symlink stored in a source tree; its text is the blob content."""

    kind: NodeKind = NodeKind.SYMLINK
    perm: int = 0o444
    length: int | None = None

    def size(self) -> int:
        if self.length is None:
            self.length = self.backend.content_length(self.swhid)
        return self.length

    def target(self) -> bytes:
        return self.backend.blob(self.swhid)


@dataclass(eq=False)
class DirectoryNode(VNode):
    def entry_node(self, entry: DirEntry) -> VNode:
        return self.layout.entry_node(self, entry)

    @property
    def cacheable(self) -> bool:
        return False  # the backend keeps the lazy listing itself

    def children(self) -> Iterator[VNode]:
        for entry in self.backend.listing(self.swhid):
            yield self.entry_node(entry)

    def lookup(self, name: bytes) -> VNode | None:
        entry = self.backend.listing(self.swhid).find(name)
        return self.entry_node(entry) if entry is not None else None


# -- commits and releases ----------------------------------------------------

@dataclass(eq=False)
class RevisionNode(VNode):
    def children(self) -> Iterator[VNode]:
        yield from self.layout.render_revision(self, self.backend.revision(self.swhid))


@dataclass(eq=False)
class ParentsDir(VNode):
    parents: tuple[SWHID, ...] = ()

    def children(self) -> Iterator[VNode]:
        for i, parent in enumerate(self.parents, start=1):
            yield archive_link(self, str(i).encode(), parent)


@dataclass(eq=False)
class ReleaseNode(VNode):
    def children(self) -> Iterator[VNode]:
        meta = self.backend.release(self.swhid)
        yield archive_link(self, b"meta.json", self.swhid, paths.JSON_SUFFIX)
        if meta.target is None:
            return
        yield archive_link(self, b"target", meta.target)
        yield self.child(StaticFile, b"target_type", data=target_type_name(meta.target.object_type).encode() + b"\n")
        tree = self._root_tree(meta.target)
        if tree is not None:
            yield archive_link(self, b"root", tree)

    def _root_tree(self, target: SWHID) -> SWHID | None:
        if target.object_type is ObjectType.DIRECTORY:
            return target
        if target.object_type is ObjectType.REVISION:
            try:
                return self.backend.revision(target).tree
            except NotFound:
                return None
        return None


# -- snapshots ---------------------------------------------------------------

@dataclass(eq=False)
class SnapshotNode(VNode):
    """Snapshot root or one of its intermediate branch-name directories."""

    prefix: tuple[bytes, ...] = ()

    def children(self) -> Iterator[VNode]:
        yield from self.layout.render_snapshot(self, self.backend.snapshot(self.swhid), self.prefix)


# -- origins -----------------------------------------------------------------

@dataclass(eq=False)
class OriginDir(VNode):
    """Lists origins seen so far; any percent-encoded origin URL resolves on lookup."""

    def children(self) -> Iterator[VNode]:
        for url in self.backend.origins():
            yield self.child(OriginNode, paths.encode_origin(url).encode(), url=url, ttl=NEVER)

    def lookup(self, name: bytes) -> VNode | None:
        try:
            url = paths.decode_origin(name.decode("ascii"))
        except UnicodeDecodeError:
            return None
        if url is None:
            return None
        try:
            self.backend.visits(url)
        except NotFound:
            return None
        return self.child(OriginNode, name, url=url, ttl=NEVER)


@dataclass(eq=False)
class OriginNode(VNode):
    url: str = ""

    def children(self) -> Iterator[VNode]:
        yield from self.layout.render_origin(self, self.backend.visits(self.url))


@dataclass(eq=False)
class VisitDir(VNode):
    visit: OriginVisit | None = None

    def children(self) -> Iterator[VNode]:
        yield self.child(StaticFile, b"meta.json", data=render_document(self.visit.document))
        yield archive_link(self, b"snapshot", self.visit.snapshot)


# -- cache -------------------------------------------------------------------

@dataclass(eq=False)
class CacheDir(VNode):
    def children(self) -> Iterator[VNode]:
        yield from self.layout.render_cache_root(self)


@dataclass(eq=False)
class CacheShard(VNode):
    prefix: str = ""

    def children(self) -> Iterator[VNode]:
        for swhid in self.backend.cache.cached_swhids():
            if shard_prefix(swhid) == self.prefix:
                yield archive_link(self, str(swhid).encode(), swhid, ttl=NEVER)

    def unlink(self, name: bytes) -> None:
        try:
            swhid = parse_swhid(name.decode("ascii"))
        except (UnicodeDecodeError, SWHIDError):
            raise NoEntry(paths.join(self.path + (name,))) from None
        if shard_prefix(swhid) != self.prefix or not self.backend.cache.remove(str(swhid)):
            raise NoEntry(paths.join(self.path + (name,)))
        self.layout.forget_object(swhid)

