"""Core SWHID parsing and formatting.

Only the canonical core form ``swh:1:<type>:<40 lowercase hex>`` is accepted.
Qualified identifiers (``;origin=...``) are rejected with their own error so
callers can tell them apart from plain typos.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

NAMESPACE = "swh"
VERSION = 1
HASH_LEN = 40
_HEX = frozenset("0123456789abcdef")


class ObjectType(str, Enum):
    CONTENT = "cnt"
    DIRECTORY = "dir"
    REVISION = "rev"
    RELEASE = "rel"
    SNAPSHOT = "snp"

    def __str__(self) -> str:
        return self.value


class SWHIDError(ValueError):
    """Base class for identifier parse errors; ``field`` names the culprit."""

    field = "swhid"

    def __init__(self, value: object, reason: str = "") -> None:
        self.value = value
        msg = f"invalid {self.field} in SWHID {value!r}"
        if reason:
            msg = f"{msg}: {reason}"
        super().__init__(msg)


class BadNamespace(SWHIDError):
    field = "namespace"


class BadVersion(SWHIDError):
    field = "version"


class BadType(SWHIDError):
    field = "object type"


class BadHash(SWHIDError):
    field = "hash"


class QualifiedSWHID(SWHIDError):
    field = "qualifiers"


@dataclass(frozen=True, order=True)
class SWHID:
    object_type: ObjectType
    hash: str

    def __post_init__(self) -> None:
        if not isinstance(self.object_type, ObjectType):
            object.__setattr__(self, "object_type", _parse_type(self.object_type, self.object_type))
        _check_hash(self.hash, self.hash)

    @property
    def namespace(self) -> str:
        return NAMESPACE

    @property
    def version(self) -> int:
        return VERSION

    def __str__(self) -> str:
        return f"{NAMESPACE}:{VERSION}:{self.object_type.value}:{self.hash}"

    @classmethod
    def from_string(cls, s: str) -> SWHID:
        return parse_swhid(s)


def _parse_type(raw: object, whole: object) -> ObjectType:
    try:
        return ObjectType(raw)
    except ValueError:
        raise BadType(whole, f"expected one of {', '.join(t.value for t in ObjectType)}") from None


def _check_hash(raw: object, whole: object) -> None:
    if not isinstance(raw, str) or len(raw) != HASH_LEN:
        raise BadHash(whole, f"expected {HASH_LEN} hex digits")
    if not _HEX.issuperset(raw):
        raise BadHash(whole, "expected lowercase hex digits only")


def parse_swhid(s: str) -> SWHID:
    """Parse a core SWHID; raises a :class:`SWHIDError` subclass on any defect."""
    if not isinstance(s, str):
        raise BadNamespace(s, "not a string")
    if ";" in s:
        raise QualifiedSWHID(s, "qualified identifiers are not supported")
    parts = s.split(":")
    if parts[0] != NAMESPACE:
        raise BadNamespace(s, f"expected {NAMESPACE!r}")
    if len(parts) < 2 or parts[1] != str(VERSION):
        raise BadVersion(s, f"only version {VERSION} is supported")
    if len(parts) < 3:
        raise BadType(s, "missing object type")
    object_type = _parse_type(parts[2], s)
    if len(parts) != 4:
        raise BadHash(s, "missing or extra fields")
    _check_hash(parts[3], s)
    return SWHID(object_type, parts[3])


def format_swhid(swhid: SWHID) -> str:
    return str(swhid)


def is_swhid(s: str) -> bool:
    try:
        parse_swhid(s)
    except SWHIDError:
        return False
    return True


def shard_prefix(swhid: SWHID, n: int = 2) -> str:
    """First ``n`` hex digits of the hash, used for sharded directory names."""
    if not 1 <= n <= HASH_LEN:
        raise ValueError(f"shard length must be within 1..{HASH_LEN}, got {n}")
    return swhid.hash[:n]
