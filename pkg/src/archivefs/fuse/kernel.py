"""Linux FUSE kernel ABI (``<linux/fuse.h>``): opcodes, flags and wire structs.

Only the subset a read-only filesystem needs is modelled. All integers are
native-endian; every reply starts with a ``fuse_out_header``.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass

KERNEL_VERSION = 7
KERNEL_MINOR_VERSION = 31
ROOT_ID = 1

MIN_READ_BUFFER = 8192


class Opcode(enum.IntEnum):
    LOOKUP = 1
    FORGET = 2
    GETATTR = 3
    SETATTR = 4
    READLINK = 5
    SYMLINK = 6
    MKNOD = 8
    MKDIR = 9
    UNLINK = 10
    RMDIR = 11
    RENAME = 12
    LINK = 13
    OPEN = 14
    READ = 15
    WRITE = 16
    STATFS = 17
    RELEASE = 18
    FSYNC = 20
    SETXATTR = 21
    GETXATTR = 22
    LISTXATTR = 23
    REMOVEXATTR = 24
    FLUSH = 25
    INIT = 26
    OPENDIR = 27
    READDIR = 28
    RELEASEDIR = 29
    FSYNCDIR = 30
    GETLK = 31
    SETLK = 32
    SETLKW = 33
    ACCESS = 34
    CREATE = 35
    INTERRUPT = 36
    BMAP = 37
    DESTROY = 38
    IOCTL = 39
    POLL = 40
    NOTIFY_REPLY = 41
    BATCH_FORGET = 42
    FALLOCATE = 43
    READDIRPLUS = 44
    RENAME2 = 45
    LSEEK = 46
    COPY_FILE_RANGE = 47
    SETUPMAPPING = 48
    REMOVEMAPPING = 49
    SYNCFS = 50
    TMPFILE = 51
    STATX = 52


MUTATING = frozenset({
    Opcode.SETATTR, Opcode.SYMLINK, Opcode.MKNOD, Opcode.MKDIR, Opcode.RMDIR,
    Opcode.RENAME, Opcode.LINK, Opcode.WRITE, Opcode.SETXATTR, Opcode.REMOVEXATTR,
    Opcode.CREATE, Opcode.FALLOCATE, Opcode.RENAME2, Opcode.COPY_FILE_RANGE,
    Opcode.TMPFILE,
})

NO_REPLY = frozenset({Opcode.FORGET, Opcode.BATCH_FORGET, Opcode.INTERRUPT})

# fuse_init flags
FUSE_ASYNC_READ = 1 << 0
FUSE_ATOMIC_O_TRUNC = 1 << 3
FUSE_EXPORT_SUPPORT = 1 << 4
FUSE_BIG_WRITES = 1 << 5
FUSE_DONT_MASK = 1 << 6
FUSE_AUTO_INVAL_DATA = 1 << 12
FUSE_DO_READDIRPLUS = 1 << 13
FUSE_PARALLEL_DIROPS = 1 << 18
FUSE_MAX_PAGES = 1 << 22
FUSE_CACHE_SYMLINKS = 1 << 23

# fuse_open_out.open_flags
FOPEN_DIRECT_IO = 1 << 0
FOPEN_KEEP_CACHE = 1 << 1
FOPEN_CACHE_DIR = 1 << 3

IN_HEADER = struct.Struct("=IIQQIIIHH")
OUT_HEADER = struct.Struct("=IiQ")
INIT_IN = struct.Struct("=IIII")
INIT_OUT = struct.Struct("=IIIIHHIIHHII2H20x")
ATTR = struct.Struct("=QQQQQQIIIIIIIIII")
ENTRY_OUT = struct.Struct("=QQQQII")
ATTR_OUT = struct.Struct("=QII")
GETATTR_IN = struct.Struct("=IIQ")
OPEN_IN = struct.Struct("=II")
OPEN_OUT = struct.Struct("=QII")
READ_IN = struct.Struct("=QQIIQII")
RELEASE_IN = struct.Struct("=QIIQ")
FORGET_IN = struct.Struct("=Q")
BATCH_FORGET_IN = struct.Struct("=II")
FORGET_ONE = struct.Struct("=QQ")
DIRENT = struct.Struct("=QQII")
KSTATFS = struct.Struct("=QQQQQIIII24x")
ACCESS_IN = struct.Struct("=II")
INTERRUPT_IN = struct.Struct("=Q")

assert IN_HEADER.size == 40 and OUT_HEADER.size == 16
assert INIT_OUT.size == 64 and ATTR.size == 88 and ENTRY_OUT.size == 40
assert READ_IN.size == 40 and KSTATFS.size == 80 and OPEN_OUT.size == 16

DT_DIR = 4
DT_REG = 8
DT_LNK = 10


@dataclass(frozen=True)
class RequestHeader:
    length: int
    opcode: int
    unique: int
    nodeid: int
    uid: int
    gid: int
    pid: int

    @classmethod
    def parse(cls, buf: bytes) -> RequestHeader:
        length, opcode, unique, nodeid, uid, gid, pid, _ext, _pad = IN_HEADER.unpack_from(buf)
        return cls(length, opcode, unique, nodeid, uid, gid, pid)


@dataclass(frozen=True)
class Attr:
    ino: int
    size: int
    mode: int
    nlink: int = 1
    mtime: float = 0.0
    uid: int = 0
    gid: int = 0
    blksize: int = 4096

    def pack(self) -> bytes:
        sec = int(self.mtime)
        nsec = int(round((self.mtime - sec) * 1e9)) % 1_000_000_000
        blocks = (self.size + 511) // 512
        return ATTR.pack(
            self.ino, self.size, blocks, sec, sec, sec, nsec, nsec, nsec,
            self.mode, self.nlink, self.uid, self.gid, 0, self.blksize, 0,
        )


def split_timeout(seconds: float) -> tuple[int, int]:
    sec = int(seconds)
    return sec, int((seconds - sec) * 1e9)


def pack_reply(unique: int, payload: bytes = b"", error: int = 0) -> bytes:
    """Reply message; ``error`` is a positive errno (sent negated)."""
    if error:
        return OUT_HEADER.pack(OUT_HEADER.size, -error, unique)
    return OUT_HEADER.pack(OUT_HEADER.size + len(payload), 0, unique) + payload


def pack_entry(nodeid: int, attr: Attr, entry_ttl: float, attr_ttl: float, generation: int = 0) -> bytes:
    es, ens = split_timeout(entry_ttl)
    as_, ans = split_timeout(attr_ttl)
    return ENTRY_OUT.pack(nodeid, generation, es, as_, ens, ans) + attr.pack()


def pack_attr_out(attr: Attr, ttl: float) -> bytes:
    s, ns = split_timeout(ttl)
    return ATTR_OUT.pack(s, ns, 0) + attr.pack()


def pack_dirent(ino: int, offset: int, name: bytes, dtype: int) -> bytes:
    raw = DIRENT.pack(ino, offset, len(name), dtype) + name
    return raw + b"\0" * (-len(raw) % 8)


def dirent_size(name: bytes) -> int:
    n = DIRENT.size + len(name)
    return n + (-n % 8)


def parse_name(payload: bytes) -> bytes:
    end = payload.find(b"\0")
    return payload if end < 0 else payload[:end]
