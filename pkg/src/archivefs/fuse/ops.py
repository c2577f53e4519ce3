"""Filesystem request handlers, independent of the kernel transport.

Each ``fs_*`` method takes and returns plain values and raises
:class:`FuseError` carrying an errno; :mod:`archivefs.fuse.session` turns them
into kernel replies. Handlers never hold a lock across a network call.
"""

from __future__ import annotations

import errno
import itertools
import logging
import os
import stat
import threading
from dataclasses import dataclass, field
from typing import Iterator

from archivefs.backend import BlobReader
from archivefs.cache import StorageError
from archivefs.client import ArchiveError, NotFound, TransportError
from archivefs.fuse import kernel
from archivefs.fuse.inodes import InodeTable
from archivefs.layout import NEVER, Layout, NoEntry, NodeKind, NotADirectory, ReadOnly, VNode
from archivefs.layout.paths import CACHE

log = logging.getLogger(__name__)


class FuseError(OSError):
    def __init__(self, code: int, message: str = "") -> None:
        super().__init__(code, message or os.strerror(code))


_S_IFMT = {
    NodeKind.DIRECTORY: stat.S_IFDIR,
    NodeKind.REGULAR: stat.S_IFREG,
    NodeKind.SYMLINK: stat.S_IFLNK,
}
_DTYPE = {
    NodeKind.DIRECTORY: kernel.DT_DIR,
    NodeKind.REGULAR: kernel.DT_REG,
    NodeKind.SYMLINK: kernel.DT_LNK,
}


@dataclass(frozen=True)
class Entry:
    ino: int
    attr: kernel.Attr
    entry_ttl: float
    attr_ttl: float


@dataclass(frozen=True)
class DirItem:
    name: bytes
    ino: int
    kind: NodeKind
    offset: int  # offset of the *next* item, as the kernel expects

    @property
    def dtype(self) -> int:
        return _DTYPE[self.kind]


@dataclass
class DirHandle:
    node: VNode
    ino: int
    items: list[tuple[bytes, int, NodeKind]]
    source: Iterator[VNode] | None
    lock: threading.Lock = field(default_factory=threading.Lock)


@dataclass
class FileHandle:
    node: VNode
    reader: BlobReader
    open_flags: int


def translate(exc: BaseException) -> FuseError:
    if isinstance(exc, FuseError):
        return exc
    if isinstance(exc, (NoEntry, NotFound)):
        return FuseError(errno.ENOENT)
    if isinstance(exc, NotADirectory):
        return FuseError(errno.ENOTDIR)
    if isinstance(exc, ReadOnly):
        return FuseError(errno.EROFS)
    if isinstance(exc, (TransportError, StorageError, ArchiveError)):
        return FuseError(errno.EIO, str(exc))
    return FuseError(errno.EIO, repr(exc))


class Operations:
    """Request handlers of one mounted filesystem."""

    def __init__(self, layout: Layout, uid: int | None = None, gid: int | None = None) -> None:
        self.layout = layout
        self.inodes = InodeTable(layout.root())
        self.uid = os.getuid() if uid is None else uid
        self.gid = os.getgid() if gid is None else gid
        self._handles: dict[int, DirHandle | FileHandle] = {}
        self._handle_ids = itertools.count(1)
        self._lock = threading.Lock()

    # -- helpers -----------------------------------------------------------

    def attr(self, ino: int, node: VNode) -> kernel.Attr:
        return kernel.Attr(
            ino=ino,
            size=node.size(),
            mode=_S_IFMT[node.kind] | node.perm,
            nlink=2 if node.kind is NodeKind.DIRECTORY else 1,
            mtime=node.mtime,
            uid=self.uid,
            gid=self.gid,
        )

    def node(self, ino: int) -> VNode:
        node = self.inodes.node(ino)
        if node is not None and node.ttl != NEVER:
            return node
        path = self.inodes.path(ino)
        if path is None:
            raise FuseError(errno.ENOENT, f"unknown inode {ino}")
        try:
            node = self.layout.resolve(path)
        except Exception as exc:
            raise translate(exc) from exc
        return node

    def _new_handle(self, handle) -> int:
        with self._lock:
            fh = next(self._handle_ids)
            self._handles[fh] = handle
        return fh

    def _handle(self, fh: int):
        with self._lock:
            handle = self._handles.get(fh)
        if handle is None:
            raise FuseError(errno.EBADF)
        return handle

    def _drop_handle(self, fh: int):
        with self._lock:
            return self._handles.pop(fh, None)

    # -- handlers ------------------------------------------------------------

    def fs_lookup(self, parent: int, name: bytes) -> Entry:
        try:
            child = self.layout.lookup(self.node(parent), name)
            ino = self.inodes.remember(child)
            attr = self.attr(ino, child)
        except Exception as exc:
            raise translate(exc) from exc
        return Entry(ino, attr, child.ttl, child.ttl)

    def fs_forget(self, ino: int, nlookup: int) -> None:
        self.inodes.forget(ino, nlookup)

    def fs_getattr(self, ino: int) -> tuple[kernel.Attr, float]:
        node = self.node(ino)
        try:
            return self.attr(ino, node), node.ttl
        except Exception as exc:
            raise translate(exc) from exc

    def fs_readlink(self, ino: int) -> bytes:
        node = self.node(ino)
        if node.kind is not NodeKind.SYMLINK:
            raise FuseError(errno.EINVAL)
        try:
            return node.target()
        except Exception as exc:
            raise translate(exc) from exc

    def fs_opendir(self, ino: int) -> int:
        node = self.node(ino)
        if node.kind is not NodeKind.DIRECTORY:
            raise FuseError(errno.ENOTDIR)
        path = self.inodes.path(ino) or ()
        parent_ino = self.inodes.inode(path[:-1]) if path else kernel.ROOT_ID
        items = [(b".", ino, NodeKind.DIRECTORY), (b"..", parent_ino, NodeKind.DIRECTORY)]
        return self._new_handle(DirHandle(node, ino, items, None))

    def fs_readdir(self, ino: int, offset: int, size: int = 4096, fh: int | None = None) -> list[DirItem]:
        """Entries from ``offset`` fitting in ``size`` bytes of dirent buffer.

        Children are pulled from the layout only as far as this batch needs,
        so the first batch of a large directory costs one backend page.
        """
        temporary = fh is None
        if temporary:
            fh = self.fs_opendir(ino)
        try:
            handle = self._handle(fh)
            if not isinstance(handle, DirHandle):
                raise FuseError(errno.EBADF)
            out: list[DirItem] = []
            used = 0
            with handle.lock:
                i = offset
                while True:
                    while i >= len(handle.items) and self._pull(handle):
                        pass
                    if i >= len(handle.items):
                        break
                    name, child_ino, kind = handle.items[i]
                    need = kernel.dirent_size(name)
                    if used + need > size:
                        if not out:
                            raise FuseError(errno.EINVAL, "readdir buffer too small")
                        break
                    used += need
                    out.append(DirItem(name, child_ino, kind, i + 1))
                    i += 1
            return out
        except FuseError:
            raise
        except Exception as exc:
            raise translate(exc) from exc
        finally:
            if temporary:
                self.fs_releasedir(fh)

    def _pull(self, handle: DirHandle) -> bool:
        if handle.source is None:
            handle.source = self.layout.children(handle.node)
        try:
            child = next(handle.source)
        except StopIteration:
            return False
        handle.items.append((child.name, self.inodes.inode(child.path), child.kind))
        return True

    def fs_releasedir(self, fh: int) -> None:
        self._drop_handle(fh)

    def fs_open(self, ino: int, flags: int = os.O_RDONLY) -> tuple[int, int]:
        """Open a regular file; returns ``(fh, fopen_flags)``."""
        if flags & (os.O_WRONLY | os.O_RDWR | os.O_TRUNC | os.O_APPEND):
            raise FuseError(errno.EROFS)
        node = self.node(ino)
        if node.kind is NodeKind.DIRECTORY:
            raise FuseError(errno.EISDIR)
        if node.kind is not NodeKind.REGULAR:
            raise FuseError(errno.EINVAL)
        try:
            reader = node.open()
        except Exception as exc:
            raise translate(exc) from exc
        open_flags = kernel.FOPEN_DIRECT_IO if node.direct_io else kernel.FOPEN_KEEP_CACHE
        return self._new_handle(FileHandle(node, reader, open_flags)), open_flags

    def fs_read(self, fh: int, offset: int, size: int) -> bytes:
        handle = self._handle(fh)
        if not isinstance(handle, FileHandle):
            raise FuseError(errno.EBADF)
        try:
            return handle.reader.read(offset, size)
        except Exception as exc:
            raise translate(exc) from exc

    def fs_release(self, fh: int) -> None:
        handle = self._drop_handle(fh)
        if isinstance(handle, FileHandle):
            handle.reader.close()

    def fs_unlink(self, parent: int, name: bytes) -> None:
        """Only cache entries can be removed (evicting them); all else is EROFS."""
        path = self.inodes.path(parent)
        if not path or path[0] != CACHE:
            raise FuseError(errno.EROFS)
        node = self.node(parent)
        try:
            node.unlink(name)
        except Exception as exc:
            raise translate(exc) from exc

    def fs_access(self, ino: int, mask: int) -> None:
        if mask & os.W_OK:
            raise FuseError(errno.EROFS)
        node = self.node(ino)
        if mask & os.X_OK and node.kind is NodeKind.REGULAR and not node.perm & 0o111:
            raise FuseError(errno.EACCES)

    def fs_statfs(self) -> bytes:
        return kernel.KSTATFS.pack(0, 0, 0, len(self.inodes), 0, 4096, 255, 4096, 0)
