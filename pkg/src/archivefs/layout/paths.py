"""Lexical path helpers for the virtual tree (paths are tuples of byte names)."""

from __future__ import annotations

import posixpath
from urllib.parse import quote, unquote

from archivefs.swhid import SWHID

Path = tuple[bytes, ...]

ARCHIVE = b"archive"
ORIGIN = b"origin"
CACHE = b"cache"
README = b"README"
JSON_SUFFIX = b".json"


def archive_path(swhid: SWHID, suffix: bytes = b"") -> Path:
    return (ARCHIVE, str(swhid).encode() + suffix)


def relative_target(from_dir: Path, to: Path) -> bytes:
    """Relative link text leading from directory ``from_dir`` to ``to``."""
    common = 0
    for a, b in zip(from_dir, to):
        if a != b:
            break
        common += 1
    parts = [b".."] * (len(from_dir) - common) + list(to[common:])
    return b"/".join(parts) if parts else b"."


def relative_symlink(from_dir: Path, to_swhid: SWHID, suffix: bytes = b"") -> bytes:
    """Link text reaching ``archive/<to_swhid>`` from the directory ``from_dir``."""
    return relative_target(tuple(from_dir), archive_path(to_swhid, suffix))


def resolve_link(link_dir: Path, target: bytes) -> Path | None:
    """Lexically resolve ``target`` relative to ``link_dir``; None if it escapes the root."""
    parts = list(link_dir)
    for comp in target.split(b"/"):
        if comp in (b"", b"."):
            continue
        if comp == b"..":
            if not parts:
                return None
            parts.pop()
        else:
            parts.append(comp)
    return tuple(parts)


def join(path: Path) -> str:
    return posixpath.join(*[p.decode("utf-8", "surrogateescape") for p in path]) if path else ""


def encode_origin(url: str) -> str:
    """Percent-encode an origin URL into a single path component."""
    return quote(url, safe="")


def decode_origin(name: str) -> str | None:
    """Inverse of :func:`encode_origin`; None unless ``name`` is canonically encoded."""
    try:
        url = unquote(name, errors="strict")
    except UnicodeDecodeError:
        return None
    if not url or encode_origin(url) != name:
        return None
    return url
