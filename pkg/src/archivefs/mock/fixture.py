"""Deterministic fixture archives.

:class:`ArchiveBuilder` assembles a Merkle DAG with Git-compatible object ids
for contents, directories and commits. It fills two views in lockstep: the
wire documents served by :mod:`archivefs.mock.server`, and a
:class:`Manifest` that tests use as their oracle.
"""

from __future__ import annotations

import hashlib
import random
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from typing import Any, Union

from archivefs.model import Perm, format_date, from_bytes, target_type_name
from archivefs.swhid import SWHID, ObjectType


@dataclass(frozen=True)
class ManifestEntry:
    name: bytes
    perm: Perm
    target: SWHID
    length: int | None


@dataclass(frozen=True)
class ManifestCommit:
    tree: SWHID
    parents: tuple[SWHID, ...]
    author: str
    author_date: datetime
    committer_date: datetime
    message: bytes


@dataclass(frozen=True)
class ManifestRelease:
    name: bytes
    target: SWHID
    date: datetime
    message: bytes


@dataclass(frozen=True)
class ManifestVisit:
    date: datetime
    snapshot: SWHID | None
    visit: int


@dataclass
class Manifest:
    blobs: dict[SWHID, bytes] = field(default_factory=dict)
    trees: dict[SWHID, list[ManifestEntry]] = field(default_factory=dict)
    commits: dict[SWHID, ManifestCommit] = field(default_factory=dict)
    releases: dict[SWHID, ManifestRelease] = field(default_factory=dict)
    snapshots: dict[SWHID, tuple[dict[bytes, SWHID], dict[bytes, bytes]]] = field(default_factory=dict)
    origins: dict[str, list[ManifestVisit]] = field(default_factory=dict)
    head: SWHID | None = None
    root_commit: SWHID | None = None
    snapshot: SWHID | None = None
    large_dir: SWHID | None = None

    @property
    def object_count(self) -> int:
        return (
            len(self.blobs) + len(self.trees) + len(self.commits)
            + len(self.releases) + len(self.snapshots)
        )

    def parent_edge_count(self) -> int:
        return sum(len(c.parents) for c in self.commits.values())


@dataclass
class MemoryArchive:
    """Wire documents keyed by SWHID, as the mock server returns them."""

    blobs: dict[SWHID, bytes] = field(default_factory=dict)
    contents: dict[SWHID, dict[str, Any]] = field(default_factory=dict)
    directories: dict[SWHID, list[dict[str, Any]]] = field(default_factory=dict)
    revisions: dict[SWHID, dict[str, Any]] = field(default_factory=dict)
    releases: dict[SWHID, dict[str, Any]] = field(default_factory=dict)
    snapshots: dict[SWHID, dict[str, Any]] = field(default_factory=dict)
    origins: dict[str, list[dict[str, Any]]] = field(default_factory=dict)


@dataclass
class Fixture:
    archive: MemoryArchive
    manifest: Manifest


def _git_sig(name: str, when: datetime) -> bytes:
    off = when.utcoffset() or timedelta(0)
    minutes = int(off.total_seconds() // 60)
    sign = "+" if minutes >= 0 else "-"
    minutes = abs(minutes)
    email = name.lower().replace(" ", ".") + "@example.org"
    return f"{name} <{email}> {int(when.timestamp())} {sign}{minutes // 60:02d}{minutes % 60:02d}".encode()


def _tree_sort_key(entry: ManifestEntry) -> bytes:
    return entry.name + b"/" if entry.perm is Perm.SUBDIRECTORY else entry.name


class ArchiveBuilder:
    def __init__(self) -> None:
        self.archive = MemoryArchive()
        self.manifest = Manifest()

    def fixture(self) -> Fixture:
        return Fixture(self.archive, self.manifest)

    def blob(self, data: bytes) -> SWHID:
        h = hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()
        swhid = SWHID(ObjectType.CONTENT, h)
        if swhid not in self.archive.blobs:
            self.archive.blobs[swhid] = data
            self.archive.contents[swhid] = {
                "length": len(data),
                "checksums": {"sha1_git": h, "sha1": hashlib.sha1(data).hexdigest()},
                "status": "visible",
            }
            self.manifest.blobs[swhid] = data
        return swhid

    def tree(self, entries: list[tuple[bytes, Perm, SWHID]]) -> SWHID:
        items = []
        for name, perm, target in entries:
            length = len(self.manifest.blobs[target]) if target in self.manifest.blobs else None
            items.append(ManifestEntry(name, perm, target, length))
        items.sort(key=_tree_sort_key)
        names = [e.name for e in items]
        if len(set(names)) != len(names):
            raise ValueError("duplicate names in tree")
        raw = b"".join(
            b"%o %s\0" % (e.perm.git_mode, e.name) + bytes.fromhex(e.target.hash) for e in items
        )
        h = hashlib.sha1(b"tree %d\0" % len(raw) + raw).hexdigest()
        swhid = SWHID(ObjectType.DIRECTORY, h)
        if swhid not in self.archive.directories:
            self.manifest.trees[swhid] = items
            self.archive.directories[swhid] = [
                {
                    "dir_id": h,
                    "name": from_bytes(e.name),
                    "type": e.perm.entry_type,
                    "target": e.target.hash,
                    "perms": e.perm.git_mode,
                    "length": e.length,
                }
                for e in items
            ]
        return swhid

    def commit(
        self,
        tree: SWHID,
        parents: list[SWHID],
        author: str,
        date: datetime,
        message: bytes,
        committer_date: datetime | None = None,
    ) -> SWHID:
        committer_date = committer_date or date
        raw = b"tree %s\n" % tree.hash.encode()
        raw += b"".join(b"parent %s\n" % p.hash.encode() for p in parents)
        raw += b"author " + _git_sig(author, date) + b"\n"
        raw += b"committer " + _git_sig(author, committer_date) + b"\n\n" + message
        h = hashlib.sha1(b"commit %d\0" % len(raw) + raw).hexdigest()
        swhid = SWHID(ObjectType.REVISION, h)
        person = {
            "name": author,
            "email": author.lower().replace(" ", ".") + "@example.org",
            "fullname": _git_sig(author, date).split(b">")[0].decode() + ">",
        }
        self.archive.revisions[swhid] = {
            "id": h,
            "directory": tree.hash,
            "parents": [{"id": p.hash} for p in parents],
            "author": person,
            "committer": person,
            "date": format_date(date),
            "committer_date": format_date(committer_date),
            "message": from_bytes(message),
            "type": "git",
            "merge": len(parents) > 1,
        }
        self.manifest.commits[swhid] = ManifestCommit(
            tree, tuple(parents), author, date, committer_date, message
        )
        return swhid

    def release(self, name: bytes, target: SWHID, date: datetime, message: bytes) -> SWHID:
        raw = b"object %s\ntype %s\ntag %s\n\n%s" % (
            target.hash.encode(), target_type_name(target.object_type).encode(), name, message,
        )
        h = hashlib.sha1(b"tag %d\0" % len(raw) + raw).hexdigest()
        swhid = SWHID(ObjectType.RELEASE, h)
        self.archive.releases[swhid] = {
            "id": h,
            "name": from_bytes(name),
            "message": from_bytes(message),
            "date": format_date(date),
            "target": target.hash,
            "target_type": target_type_name(target.object_type),
            "author": {"name": "Release Bot", "email": "bot@example.org"},
        }
        self.manifest.releases[swhid] = ManifestRelease(name, target, date, message)
        return swhid

    def snapshot(self, branches: dict[bytes, SWHID], aliases: dict[bytes, bytes] | None = None) -> SWHID:
        aliases = aliases or {}
        raw = b"".join(
            b"%s\0%s\n" % (name, str(t).encode()) for name, t in sorted(branches.items())
        ) + b"".join(b"%s\0alias:%s\n" % (name, t) for name, t in sorted(aliases.items()))
        h = hashlib.sha1(b"snapshot %d\0" % len(raw) + raw).hexdigest()
        swhid = SWHID(ObjectType.SNAPSHOT, h)
        wire = {
            from_bytes(name): {"target": t.hash, "target_type": target_type_name(t.object_type)}
            for name, t in branches.items()
        }
        wire.update(
            {from_bytes(name): {"target": from_bytes(t), "target_type": "alias"} for name, t in aliases.items()}
        )
        self.archive.snapshots[swhid] = {"id": h, "branches": dict(sorted(wire.items()))}
        self.manifest.snapshots[swhid] = (dict(branches), dict(aliases))
        return swhid

    def visit(self, url: str, date: datetime, snapshot: SWHID | None) -> None:
        visits = self.archive.origins.setdefault(url, [])
        number = len(visits) + 1
        visits.append(
            {
                "origin": url,
                "date": format_date(date),
                "visit": number,
                "snapshot": snapshot.hash if snapshot else None,
                "status": "full" if snapshot else "failed",
                "type": "git",
            }
        )
        self.manifest.origins.setdefault(url, []).append(ManifestVisit(date, snapshot, number))


# -- random fixtures ---------------------------------------------------------

_WORDS = (
    "alpha bravo charlie delta echo foxtrot golf hotel india juliet kilo lima "
    "mike november oscar papa quebec romeo sierra tango uniform victor whiskey "
    "xray yankee zulu"
).split()
_EXTS = (".c", ".h", ".py", ".txt", ".md", ".s", "")
_AUTHORS = ("Ada Lovelace", "Alan Turing", "Grace Hopper", "Ken Thompson", "Margaret Hamilton")
_OFFSETS = (0, 60, 120, -300, -420, 330, 540)


@dataclass(frozen=True)
class FixtureSpec:
    seed: int = 42
    commits: int = 80
    merge_probability: float = 0.15
    branch_probability: float = 0.1
    dir_fanout: tuple[int, int] = (3, 7)
    max_depth: int = 3
    blob_size: tuple[int, int] = (0, 2048)
    changes_per_commit: int = 3
    date_tie_probability: float = 0.1
    releases: int = 2
    visits: int = 3
    exotic_names: bool = True
    large_dir_entries: int = 0
    origin_url: str = "https://example.org/linux"

    @classmethod
    def chain(cls, commits: int, seed: int = 0, **kw: Any) -> FixtureSpec:
        return cls(seed=seed, commits=commits, merge_probability=0.0, branch_probability=0.0, **kw)

    @classmethod
    def empty(cls) -> FixtureSpec:
        return cls(commits=1, dir_fanout=(0, 0), releases=0, visits=0, exotic_names=False)


_Node = Union[dict, tuple]  # dict: subdirectory, tuple: (data, perm)


class _Generator:
    def __init__(self, spec: FixtureSpec) -> None:
        self.spec = spec
        self.rng = random.Random(spec.seed)
        self.b = ArchiveBuilder()
        self.counter = 0

    def name(self) -> bytes:
        self.counter += 1
        word = self.rng.choice(_WORDS)
        return f"{word}-{self.counter}{self.rng.choice(_EXTS)}".encode()

    def data(self) -> bytes:
        lo, hi = self.spec.blob_size
        n = self.rng.randint(lo, hi)
        return self.rng.randbytes(n) if self.rng.random() < 0.2 else bytes(
            self.rng.choice(b"abcdefghijklmnopqrstuvwxyz \n") for _ in range(n)
        )

    def file(self) -> tuple:
        perm = Perm.EXECUTABLE_FILE if self.rng.random() < 0.15 else Perm.FILE
        return (self.data(), perm)

    def random_tree(self, depth: int) -> dict:
        lo, hi = self.spec.dir_fanout
        tree: dict = {}
        for _ in range(self.rng.randint(lo, hi)):
            if depth < self.spec.max_depth and self.rng.random() < 0.3:
                tree[self.name()] = self.random_tree(depth + 1)
            else:
                tree[self.name()] = self.file()
        return tree

    def files(self, tree: dict, prefix: tuple = ()) -> list[tuple]:
        out = []
        for name, node in tree.items():
            if isinstance(node, dict):
                out.extend(self.files(node, prefix + (name,)))
            elif node[1] in (Perm.FILE, Perm.EXECUTABLE_FILE):
                out.append(prefix + (name,))
        return out

    def dirs(self, tree: dict, prefix: tuple = ()) -> list[tuple]:
        out = [prefix]
        for name, node in tree.items():
            if isinstance(node, dict):
                out.extend(self.dirs(node, prefix + (name,)))
        return out

    @staticmethod
    def at(tree: dict, path: tuple) -> dict:
        for part in path:
            tree = tree[part]
        return tree

    def mutate(self, tree: dict) -> None:
        for _ in range(self.spec.changes_per_commit):
            roll = self.rng.random()
            files = self.files(tree)
            if roll < 0.6 and files:
                path = self.rng.choice(files)
                parent = self.at(tree, path[:-1])
                parent[path[-1]] = (self.data(), parent[path[-1]][1])
            elif roll < 0.85 or not files:
                parent = self.at(tree, self.rng.choice(self.dirs(tree)))
                parent[self.name()] = self.file()
            else:
                path = self.rng.choice(files)
                del self.at(tree, path[:-1])[path[-1]]

    def store(self, tree: dict) -> SWHID:
        entries = []
        for name, node in tree.items():
            if isinstance(node, dict):
                entries.append((name, Perm.SUBDIRECTORY, self.store(node)))
            elif node[1] is Perm.SUBMODULE_REVISION:
                entries.append((name, node[1], node[0]))
            else:
                entries.append((name, node[1], self.b.blob(node[0])))
        return self.b.tree(entries)

    def add_exotic(self, tree: dict, commits: list[SWHID]) -> None:
        tree[b"with space.txt"] = (b"spaces are fine\n", Perm.FILE)
        tree["café-üml.txt".encode()] = (b"utf-8 name\n", Perm.FILE)
        tree[b"latin1-\xe9t\xe9.bin"] = (b"not valid utf-8 in the name\n", Perm.FILE)
        tree[b"empty"] = (b"", Perm.FILE)
        target = next(iter(n for n, v in tree.items() if isinstance(v, tuple) and v[1] is Perm.FILE))
        tree[b"link-to-" + target] = (target, Perm.SYMLINK)
        if commits:
            tree[b"vendored"] = (commits[0], Perm.SUBMODULE_REVISION)

    def add_large(self, tree: dict) -> None:
        # distinct names sharing few blobs keeps memory flat
        big = {}
        for i in range(self.spec.large_dir_entries):
            big[f"entry-{i:05d}".encode()] = (f"{i % 7}\n".encode(), Perm.FILE)
        tree[b"big"] = big

    def run(self) -> Fixture:
        spec, rng, b = self.spec, self.rng, self.b
        base = datetime(2020, 1, 1, tzinfo=timezone.utc)
        commits: list[SWHID] = []
        trees: dict[SWHID, dict] = {}
        stamps: dict[SWHID, datetime] = {}
        heads: list[SWHID] = []
        for i in range(spec.commits):
            if not commits:
                tree = self.random_tree(0)
                parents: list[SWHID] = []
            else:
                if rng.random() < spec.branch_probability and len(commits) > 1:
                    first = rng.choice(commits[:-1])
                else:
                    first = heads[-1]
                parents = [first]
                others = [h for h in heads if h != first]
                if others and rng.random() < spec.merge_probability:
                    parents.append(rng.choice(others))
                tree = _deepcopy_tree(trees[first])
                self.mutate(tree)
            if i == 1 and spec.exotic_names:
                self.add_exotic(tree, commits)
            if i == spec.commits - 1 and spec.large_dir_entries:
                self.add_large(tree)
            tree_id = self.store(tree)
            if parents and rng.random() < spec.date_tie_probability:
                when = stamps[parents[0]]
            else:
                when = base + timedelta(hours=6 * i, seconds=rng.randint(-30000, 30000))
            when = when.astimezone(timezone(timedelta(minutes=rng.choice(_OFFSETS))))
            author = rng.choice(_AUTHORS)
            message = f"Commit {i}: touch {rng.choice(_WORDS)}\n".encode()
            swhid = b.commit(tree_id, parents, author, when, message)
            trees[swhid] = tree
            stamps[swhid] = when
            commits.append(swhid)
            for p in parents:
                if p in heads:
                    heads.remove(p)
            heads.append(swhid)

        m = b.manifest
        m.head = commits[-1]
        m.root_commit = commits[0]
        if spec.large_dir_entries:
            m.large_dir = next(
                e.target for e in m.trees[m.commits[m.head].tree] if e.name == b"big"
            )

        releases = []
        for k in range(spec.releases):
            target = rng.choice(commits)
            releases.append(
                b.release(
                    f"v{k + 1}.0".encode(), target,
                    stamps[target] + timedelta(days=1), f"Release {k + 1}\n".encode(),
                )
            )
        branches: dict[bytes, SWHID] = {b"refs/heads/main": commits[-1]}
        for k, h in enumerate(h for h in heads if h != commits[-1]):
            branches[f"refs/heads/topic-{k}".encode()] = h
        if len(commits) > 2:
            branches[b"refs/heads/feature/deep/nest"] = commits[len(commits) // 2]
        for k, rel in enumerate(releases):
            branches[f"refs/tags/v{k + 1}.0".encode()] = rel
        snp = b.snapshot(branches, {b"HEAD": b"refs/heads/main"})
        m.snapshot = snp
        if spec.visits:
            first = base - timedelta(days=30)
            for k in range(spec.visits):
                b.visit(spec.origin_url, first + timedelta(days=97 * k, hours=rng.randint(0, 12)), snp)
            b.visit(spec.origin_url, first + timedelta(days=97 * spec.visits), None)
        return b.fixture()


def _deepcopy_tree(tree: dict) -> dict:
    return {k: _deepcopy_tree(v) if isinstance(v, dict) else v for k, v in tree.items()}


def generate_fixture(spec: FixtureSpec | None = None) -> Fixture:
    """Build a random but reproducible archive from ``spec``."""
    return _Generator(spec or FixtureSpec()).run()


# -- golden mini-archive -----------------------------------------------------

HELLO_C = b'#include <stdio.h>\n\nint main(void) {\n\tprintf("Hello, World!\\n");\n}\n'
GOLDEN_ORIGIN = "https://example.org/golden.git"


def golden_fixture() -> Fixture:
    """Small hand-written archive used by docs and examples.

    The hello-world content hashes to ``swh:1:cnt:c839dea9e8e6f0528b468214348fee8669b305b2``.
    """
    b = ArchiveBuilder()
    hello = b.blob(HELLO_C)
    readme = b.blob(b"Golden fixture\n")
    build = b.blob(b"#!/bin/sh\ncc -o hello hello.c\n")
    src = b.tree([(b"hello.c", Perm.FILE, hello)])
    tz = timezone(timedelta(hours=1))
    t0 = datetime(2024, 1, 1, 9, 0, tzinfo=tz)
    root1 = b.tree([(b"README", Perm.FILE, readme)])
    c1 = b.commit(root1, [], "Ada Lovelace", t0, b"Initial commit\n")
    root2 = b.tree([(b"README", Perm.FILE, readme), (b"src", Perm.SUBDIRECTORY, src)])
    c2 = b.commit(root2, [c1], "Alan Turing", t0 + timedelta(hours=3), b"Add hello world\n")
    root3 = b.tree(
        [
            (b"README", Perm.FILE, readme),
            (b"src", Perm.SUBDIRECTORY, src),
            (b"build.sh", Perm.EXECUTABLE_FILE, build),
            (b"README.link", Perm.SYMLINK, b.blob(b"README")),
        ]
    )
    c3 = b.commit(root3, [c2], "Grace Hopper", t0 + timedelta(days=1), b"Add build script\n")
    rel = b.release(b"v1.0", c3, t0 + timedelta(days=2), b"First release\n")
    snp = b.snapshot(
        {
            b"refs/heads/main": c3,
            b"refs/heads/feature/hello": c2,
            b"refs/heads/Bell-Release": c1,
            b"refs/tags/v1.0": rel,
        },
        {b"HEAD": b"refs/heads/main"},
    )
    b.visit(GOLDEN_ORIGIN, datetime(2024, 1, 1, 10, tzinfo=timezone.utc), snp)
    b.visit(GOLDEN_ORIGIN, datetime(2024, 1, 1, 18, tzinfo=timezone.utc), snp)
    m = b.manifest
    m.head, m.root_commit, m.snapshot = c3, c1, snp
    return b.fixture()
