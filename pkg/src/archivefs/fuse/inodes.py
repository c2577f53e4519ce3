from __future__ import annotations

import threading

from archivefs.fuse.kernel import ROOT_ID
from archivefs.layout import VNode
from archivefs.layout.paths import Path


class InodeTable:
    """Bijection between inode numbers and virtual paths for one mount.

    Numbers are allocated sequentially and never reused, so a path looked up
    again after the kernel forgot it gets its old number back.
    """

    generation = 1

    def __init__(self, root: VNode) -> None:
        self._lock = threading.Lock()
        self._ino_by_path: dict[Path, int] = {(): ROOT_ID}
        self._path_by_ino: dict[int, Path] = {ROOT_ID: ()}
        self._nodes: dict[int, VNode] = {ROOT_ID: root}
        self._lookups: dict[int, int] = {}
        self._next = ROOT_ID + 1

    def inode(self, path: Path) -> int:
        """Inode number of ``path``, allocating one on first sight."""
        with self._lock:
            ino = self._ino_by_path.get(path)
            if ino is None:
                ino = self._next
                self._next += 1
                self._ino_by_path[path] = ino
                self._path_by_ino[ino] = path
            return ino

    def remember(self, node: VNode) -> int:
        """Record a kernel lookup of ``node``; returns its inode."""
        ino = self.inode(node.path)
        with self._lock:
            self._nodes[ino] = node
            self._lookups[ino] = self._lookups.get(ino, 0) + 1
        return ino

    def node(self, ino: int) -> VNode | None:
        with self._lock:
            return self._nodes.get(ino)

    def path(self, ino: int) -> Path | None:
        with self._lock:
            return self._path_by_ino.get(ino)

    def forget(self, ino: int, nlookup: int) -> None:
        if ino == ROOT_ID:
            return
        with self._lock:
            left = self._lookups.get(ino, 0) - nlookup
            if left > 0:
                self._lookups[ino] = left
            else:
                self._lookups.pop(ino, None)
                self._nodes.pop(ino, None)

    def live(self) -> int:
        with self._lock:
            return len(self._nodes)

    def __len__(self) -> int:
        with self._lock:
            return len(self._path_by_ino)
