"""Typed views over archive API documents.

Byte-string fields (entry names, messages, branch names) travel over JSON as
strings whose undecodable bytes are carried as lone surrogates
(``surrogateescape``); :func:`to_bytes` and :func:`from_bytes` convert.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Any, Iterable, Mapping

from archivefs.swhid import SWHID, ObjectType, parse_swhid

EPOCH = datetime(1970, 1, 1, tzinfo=timezone.utc)
MAX_ALIAS_DEPTH = 16


class ProtocolError(ValueError):
    """An API document does not have the expected shape."""


def to_bytes(s: str | bytes) -> bytes:
    if isinstance(s, bytes):
        return s
    return s.encode("utf-8", "surrogateescape")


def from_bytes(b: bytes) -> str:
    return b.decode("utf-8", "surrogateescape")


def parse_date(s: str | None) -> datetime | None:
    if s is None:
        return None
    if s.endswith("Z"):
        s = s[:-1] + "+00:00"
    dt = datetime.fromisoformat(s)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt


def format_date(dt: datetime) -> str:
    return dt.isoformat()


class Perm(enum.Enum):
    FILE = "file"
    EXECUTABLE_FILE = "executable_file"
    SYMLINK = "symlink"
    SUBDIRECTORY = "subdirectory"
    SUBMODULE_REVISION = "submodule_revision"

    @property
    def git_mode(self) -> int:
        return _GIT_MODES[self]

    @property
    def entry_type(self) -> str:
        if self is Perm.SUBDIRECTORY:
            return "dir"
        if self is Perm.SUBMODULE_REVISION:
            return "rev"
        return "file"

    @property
    def target_type(self) -> ObjectType:
        if self is Perm.SUBDIRECTORY:
            return ObjectType.DIRECTORY
        if self is Perm.SUBMODULE_REVISION:
            return ObjectType.REVISION
        return ObjectType.CONTENT

    @classmethod
    def from_wire(cls, entry_type: str, perms: int | None) -> Perm:
        # the entry type is authoritative; perms only refine file entries
        if entry_type == "dir":
            return cls.SUBDIRECTORY
        if entry_type == "rev":
            return cls.SUBMODULE_REVISION
        if entry_type != "file":
            raise ProtocolError(f"unknown directory entry type {entry_type!r}")
        perms = perms or 0o100644
        if perms & 0o170000 == 0o120000:
            return cls.SYMLINK
        if perms & 0o111:
            return cls.EXECUTABLE_FILE
        return cls.FILE


_GIT_MODES = {
    Perm.FILE: 0o100644,
    Perm.EXECUTABLE_FILE: 0o100755,
    Perm.SYMLINK: 0o120000,
    Perm.SUBDIRECTORY: 0o040000,
    Perm.SUBMODULE_REVISION: 0o160000,
}

_TARGET_TYPES = {
    "content": ObjectType.CONTENT,
    "directory": ObjectType.DIRECTORY,
    "revision": ObjectType.REVISION,
    "release": ObjectType.RELEASE,
    "snapshot": ObjectType.SNAPSHOT,
}
_TARGET_TYPE_NAMES = {v: k for k, v in _TARGET_TYPES.items()}


def target_type_name(t: ObjectType) -> str:
    return _TARGET_TYPE_NAMES[t]


def _swhid(t: ObjectType, value: str) -> SWHID:
    if value.startswith("swh:"):
        swhid = parse_swhid(value)
        if swhid.object_type is not t:
            raise ProtocolError(f"expected a {t.value} identifier, got {value}")
        return swhid
    return SWHID(t, value)


def _require(doc: Mapping[str, Any], key: str) -> Any:
    try:
        return doc[key]
    except (KeyError, TypeError):
        raise ProtocolError(f"missing field {key!r}") from None


@dataclass(frozen=True)
class DirEntry:
    name: bytes
    target: SWHID
    perm: Perm
    length: int | None = None

    def __post_init__(self) -> None:
        if not self.name or b"/" in self.name or b"\0" in self.name:
            raise ProtocolError(f"invalid directory entry name {self.name!r}")
        if self.target.object_type is not self.perm.target_type:
            raise ProtocolError(f"entry {self.name!r}: {self.perm.value} cannot target {self.target}")

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> DirEntry:
        perm = Perm.from_wire(_require(d, "type"), d.get("perms"))
        return cls(
            name=to_bytes(_require(d, "name")),
            target=_swhid(perm.target_type, _require(d, "target")),
            perm=perm,
            length=d.get("length"),
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": from_bytes(self.name),
            "type": self.perm.entry_type,
            "target": self.target.hash,
            "perms": self.perm.git_mode,
            "length": self.length,
        }


@dataclass(frozen=True)
class Person:
    name: str
    email: str

    @classmethod
    def from_dict(cls, d: Mapping[str, Any] | None) -> Person:
        d = d or {}
        return cls(name=d.get("name") or "", email=d.get("email") or "")


@dataclass(frozen=True)
class RevisionMeta:
    id: SWHID
    tree: SWHID
    parents: tuple[SWHID, ...]
    author: Person
    committer: Person
    author_date: datetime | None
    committer_date: datetime | None
    message: bytes

    @property
    def author_name(self) -> str:
        return self.author.name

    @property
    def author_email(self) -> str:
        return self.author.email

    @property
    def committer_name(self) -> str:
        return self.committer.name

    @property
    def committer_email(self) -> str:
        return self.committer.email

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> RevisionMeta:
        return cls(
            id=_swhid(ObjectType.REVISION, _require(d, "id")),
            tree=_swhid(ObjectType.DIRECTORY, _require(d, "directory")),
            parents=tuple(_swhid(ObjectType.REVISION, p["id"]) for p in d.get("parents") or ()),
            author=Person.from_dict(d.get("author")),
            committer=Person.from_dict(d.get("committer")),
            author_date=parse_date(d.get("date")),
            committer_date=parse_date(d.get("committer_date")),
            message=to_bytes(d.get("message") or ""),
        )


@dataclass(frozen=True)
class ReleaseMeta:
    id: SWHID
    name: bytes
    target: SWHID | None
    message: bytes
    date: datetime | None

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> ReleaseMeta:
        target = None
        if d.get("target") is not None:
            ttype = _TARGET_TYPES.get(_require(d, "target_type"))
            if ttype is None:
                raise ProtocolError(f"unknown release target type {d['target_type']!r}")
            target = _swhid(ttype, d["target"])
        return cls(
            id=_swhid(ObjectType.RELEASE, _require(d, "id")),
            name=to_bytes(d.get("name") or ""),
            target=target,
            message=to_bytes(d.get("message") or ""),
            date=parse_date(d.get("date")),
        )


class AliasError(ValueError):
    pass


@dataclass(frozen=True)
class SnapshotBranches:
    id: SWHID
    branches: dict[bytes, SWHID] = field(default_factory=dict)
    aliases: dict[bytes, bytes] = field(default_factory=dict)

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> SnapshotBranches:
        branches: dict[bytes, SWHID] = {}
        aliases: dict[bytes, bytes] = {}
        for name, target in (d.get("branches") or {}).items():
            if target is None or target.get("target") is None:
                continue  # dangling branch
            kind = target.get("target_type")
            if kind == "alias":
                aliases[to_bytes(name)] = to_bytes(target["target"])
            elif kind in _TARGET_TYPES:
                branches[to_bytes(name)] = _swhid(_TARGET_TYPES[kind], target["target"])
        return cls(id=_swhid(ObjectType.SNAPSHOT, _require(d, "id")), branches=branches, aliases=aliases)

    def resolve_alias(self, name: bytes, max_depth: int = MAX_ALIAS_DEPTH) -> bytes:
        """Follow alias links from ``name`` to a concrete branch name."""
        seen = [name]
        while name in self.aliases:
            name = self.aliases[name]
            if name in seen:
                raise AliasError(f"alias cycle: {b' -> '.join(seen + [name])!r}")
            seen.append(name)
            if len(seen) > max_depth + 1:
                raise AliasError(f"alias chain from {seen[0]!r} exceeds depth {max_depth}")
        if name not in self.branches:
            raise AliasError(f"alias {seen[0]!r} points to missing branch {name!r}")
        return name

    def resolve(self, name: bytes, max_depth: int = MAX_ALIAS_DEPTH) -> SWHID:
        return self.branches[self.resolve_alias(name, max_depth)]


@dataclass(frozen=True)
class OriginVisit:
    origin_url: str
    date: datetime
    snapshot: SWHID | None
    visit: int = 0
    document: Mapping[str, Any] | None = field(default=None, compare=False, repr=False)

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> OriginVisit:
        snp = d.get("snapshot")
        return cls(
            origin_url=_require(d, "origin"),
            date=parse_date(_require(d, "date")),
            snapshot=_swhid(ObjectType.SNAPSHOT, snp) if snp else None,
            visit=int(d.get("visit") or 0),
            document=dict(d),
        )


def history_key(swhid: SWHID, committer_date: datetime | None) -> tuple[float, str]:
    """Sort key for "git log" order: newest committer date first, then hash."""
    ts = (committer_date or EPOCH).timestamp()
    return (-ts, swhid.hash)


def sort_history(items: Iterable[tuple[SWHID, datetime | None]]) -> list[SWHID]:
    return [swhid for swhid, _ in sorted(items, key=lambda it: history_key(*it))]
