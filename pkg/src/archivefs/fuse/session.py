"""Serving :class:`~archivefs.fuse.ops.Operations` over ``/dev/fuse``.

Requests are read by one thread and handled on a thread pool, so a slow
download never stalls unrelated lookups. Mounting uses ``mount(2)`` directly
when privileged and falls back to ``fusermount3`` otherwise.
"""

from __future__ import annotations

import ctypes
import ctypes.util
import errno
import logging
import os
import shutil
import socket
import subprocess
import threading
from concurrent.futures import ThreadPoolExecutor

from archivefs.fuse import kernel
from archivefs.fuse.kernel import Opcode
from archivefs.fuse.ops import FuseError, Operations

log = logging.getLogger(__name__)

MS_NOSUID = 2
MS_NODEV = 4
MNT_DETACH = 2

DEVICE = "/dev/fuse"
FSNAME = "archivefs"
MAX_WRITE = 128 * 1024
BUFFER_SIZE = 1024 * 1024 + 4096


class FuseUnavailable(RuntimeError):
    """The kernel FUSE device or a way to mount it is missing."""


class MountpointBusy(RuntimeError):
    pass


class NotMounted(RuntimeError):
    pass


def _libc():
    libc = ctypes.CDLL(ctypes.util.find_library("c") or "libc.so.6", use_errno=True)
    libc.mount.argtypes = [ctypes.c_char_p, ctypes.c_char_p, ctypes.c_char_p, ctypes.c_ulong, ctypes.c_char_p]
    libc.umount2.argtypes = [ctypes.c_char_p, ctypes.c_int]
    return libc


def _fusermount() -> str | None:
    return shutil.which("fusermount3") or shutil.which("fusermount")


def check_mountpoint(mountpoint: str) -> str:
    path = os.path.abspath(mountpoint)
    if os.path.ismount(path):
        raise MountpointBusy(f"{path} is already a mount point")
    if not os.path.isdir(path):
        raise NotADirectoryError(errno.ENOTDIR, "mount point is not a directory", path)
    if os.listdir(path):
        raise MountpointBusy(f"{path} is not empty")
    return path


def _kernel_mount(path: str, allow_other: bool) -> int:
    fd = os.open(DEVICE, os.O_RDWR | os.O_CLOEXEC)
    opts = f"fd={fd},rootmode=40000,user_id={os.getuid()},group_id={os.getgid()}"
    if allow_other:
        opts += ",allow_other"
    libc = _libc()
    rc = libc.mount(FSNAME.encode(), os.fsencode(path), f"fuse.{FSNAME}".encode(), MS_NOSUID | MS_NODEV, opts.encode())
    if rc != 0:
        err = ctypes.get_errno()
        os.close(fd)
        raise OSError(err, os.strerror(err), path)
    return fd


def _helper_mount(path: str, allow_other: bool) -> int:
    helper = _fusermount()
    if helper is None:
        raise FuseUnavailable("not privileged to mount and no fusermount3 helper found")
    ours, theirs = socket.socketpair(socket.AF_UNIX, socket.SOCK_STREAM)
    try:
        opts = f"fsname={FSNAME},subtype={FSNAME},nosuid,nodev"
        if allow_other:
            opts += ",allow_other"
        env = dict(os.environ, _FUSE_COMMFD=str(theirs.fileno()))
        proc = subprocess.run(
            [helper, "-o", opts, "--", path],
            env=env, pass_fds=(theirs.fileno(),), capture_output=True, check=False,
        )
        theirs.close()
        if proc.returncode != 0:
            raise OSError(errno.EPERM, proc.stderr.decode(errors="replace").strip() or "fusermount failed", path)
        _msg, fds, _flags, _addr = socket.recv_fds(ours, 1, 1)
        if not fds:
            raise OSError(errno.EIO, "fusermount did not pass a descriptor", path)
        return fds[0]
    finally:
        ours.close()
        theirs.close()


def mount(mountpoint: str, allow_other: bool = False) -> int:
    """Mount an empty FUSE filesystem at ``mountpoint``; returns the device fd."""
    path = check_mountpoint(mountpoint)
    if not os.path.exists(DEVICE):
        raise FuseUnavailable(f"{DEVICE} does not exist (is the fuse module loaded?)")
    try:
        return _kernel_mount(path, allow_other)
    except OSError as exc:
        if exc.errno not in (errno.EPERM, errno.EACCES):
            raise
    return _helper_mount(path, allow_other)


def unmount(mountpoint: str, lazy: bool = False) -> None:
    path = os.path.abspath(mountpoint)
    if not os.path.ismount(path):
        raise NotMounted(f"{path} is not mounted")
    rc = _libc().umount2(os.fsencode(path), MNT_DETACH if lazy else 0)
    if rc == 0:
        return
    err = ctypes.get_errno()
    if err not in (errno.EPERM, errno.EACCES) or _fusermount() is None:
        raise OSError(err, os.strerror(err), path)
    cmd = [_fusermount(), "-u"] + (["-z"] if lazy else []) + [path]
    proc = subprocess.run(cmd, capture_output=True, check=False)
    if proc.returncode != 0:
        raise OSError(errno.EBUSY, proc.stderr.decode(errors="replace").strip(), path)


class FuseSession:
    """Request loop over one ``/dev/fuse`` connection."""

    def __init__(self, ops: Operations, fd: int, workers: int = 32) -> None:
        self.ops = ops
        self.fd = fd
        self.pool = ThreadPoolExecutor(max_workers=workers, thread_name_prefix="fuse")
        self.initialized = threading.Event()
        self.finished = threading.Event()
        self.proto_minor = 0

    # -- transport -------------------------------------------------------------

    def reply(self, unique: int, payload: bytes = b"", error: int = 0) -> None:
        try:
            os.write(self.fd, kernel.pack_reply(unique, payload, error))
        except OSError as exc:
            # ENOENT: the request was interrupted and the kernel dropped it.
            if exc.errno not in (errno.ENOENT, errno.ENODEV, errno.EBADF):
                log.warning("reply to request %d failed: %s", unique, exc)

    def run(self) -> None:
        """Serve until the filesystem is unmounted."""
        try:
            while True:
                try:
                    buf = os.read(self.fd, BUFFER_SIZE)
                except OSError as exc:
                    if exc.errno in (errno.EINTR, errno.EAGAIN, errno.ENOENT):
                        continue
                    if exc.errno in (errno.ENODEV, errno.EBADF):
                        break
                    raise
                if not buf:
                    break
                header = kernel.RequestHeader.parse(buf)
                payload = buf[kernel.IN_HEADER.size:header.length]
                if not self._handle_inline(header, payload):
                    break
        finally:
            self.pool.shutdown(wait=True, cancel_futures=True)
            try:
                os.close(self.fd)
            except OSError:
                pass
            self.finished.set()

    def start(self) -> threading.Thread:
        thread = threading.Thread(target=self.run, name="fuse-loop", daemon=True)
        thread.start()
        return thread

    def _handle_inline(self, h: kernel.RequestHeader, payload: bytes) -> bool:
        op = h.opcode
        if op == Opcode.INIT:
            self._init(h, payload)
        elif op == Opcode.DESTROY:
            self.reply(h.unique)
            return False
        elif op == Opcode.FORGET:
            (nlookup,) = kernel.FORGET_IN.unpack_from(payload)
            self.ops.fs_forget(h.nodeid, nlookup)
        elif op == Opcode.BATCH_FORGET:
            count, _ = kernel.BATCH_FORGET_IN.unpack_from(payload)
            off = kernel.BATCH_FORGET_IN.size
            for _ in range(count):
                nodeid, nlookup = kernel.FORGET_ONE.unpack_from(payload, off)
                off += kernel.FORGET_ONE.size
                self.ops.fs_forget(nodeid, nlookup)
        elif op == Opcode.INTERRUPT:
            pass
        else:
            try:
                self.pool.submit(self._dispatch, h, payload)
            except RuntimeError:  # pool shut down
                return False
        return True

    def _init(self, h: kernel.RequestHeader, payload: bytes) -> None:
        major, minor, max_readahead, flags = kernel.INIT_IN.unpack_from(payload)
        if major < kernel.KERNEL_VERSION:
            log.error("kernel FUSE protocol %d.%d too old", major, minor)
            self.reply(h.unique, error=errno.EPROTO)
            return
        if major > kernel.KERNEL_VERSION:
            # Ask the kernel to retry with our major version.
            self.reply(h.unique, kernel.INIT_OUT.pack(kernel.KERNEL_VERSION, kernel.KERNEL_MINOR_VERSION, *([0] * 12)))
            return
        self.proto_minor = min(minor, kernel.KERNEL_MINOR_VERSION)
        wanted = kernel.FUSE_ASYNC_READ | kernel.FUSE_PARALLEL_DIROPS | kernel.FUSE_CACHE_SYMLINKS
        out = kernel.INIT_OUT.pack(
            kernel.KERNEL_VERSION, kernel.KERNEL_MINOR_VERSION,
            max_readahead, flags & wanted,
            16, 12,  # max_background, congestion_threshold
            MAX_WRITE, 1,  # max_write, time_gran
            0, 0, 0, 0, 0, 0,
        )
        self.reply(h.unique, out)
        self.initialized.set()
        log.debug("FUSE session initialised, kernel protocol %d.%d", major, minor)

    def _dispatch(self, h: kernel.RequestHeader, payload: bytes) -> None:
        try:
            self.reply(h.unique, self._call(h, payload))
        except FuseError as exc:
            if exc.errno == errno.EIO:
                log.warning("%s on inode %d failed: %s", _opname(h.opcode), h.nodeid, exc.strerror)
            self.reply(h.unique, error=exc.errno)
        except Exception:
            log.exception("%s on inode %d crashed", _opname(h.opcode), h.nodeid)
            self.reply(h.unique, error=errno.EIO)

    def _call(self, h: kernel.RequestHeader, payload: bytes) -> bytes:
        ops = self.ops
        op = h.opcode
        gen = ops.inodes.generation
        if op == Opcode.LOOKUP:
            e = ops.fs_lookup(h.nodeid, kernel.parse_name(payload))
            return kernel.pack_entry(e.ino, e.attr, e.entry_ttl, e.attr_ttl, gen)
        if op == Opcode.GETATTR:
            attr, ttl = ops.fs_getattr(h.nodeid)
            return kernel.pack_attr_out(attr, ttl)
        if op == Opcode.READLINK:
            return ops.fs_readlink(h.nodeid)
        if op == Opcode.OPEN:
            flags, _ = kernel.OPEN_IN.unpack_from(payload)
            fh, open_flags = ops.fs_open(h.nodeid, flags)
            return kernel.OPEN_OUT.pack(fh, open_flags, 0)
        if op == Opcode.READ:
            fh, offset, size, *_ = kernel.READ_IN.unpack_from(payload)
            return ops.fs_read(fh, offset, size)
        if op in (Opcode.RELEASE, Opcode.RELEASEDIR):
            fh = kernel.RELEASE_IN.unpack_from(payload)[0]
            (ops.fs_release if op == Opcode.RELEASE else ops.fs_releasedir)(fh)
            return b""
        if op == Opcode.OPENDIR:
            return kernel.OPEN_OUT.pack(ops.fs_opendir(h.nodeid), 0, 0)
        if op == Opcode.READDIR:
            fh, offset, size, *_ = kernel.READ_IN.unpack_from(payload)
            items = ops.fs_readdir(h.nodeid, offset, size, fh)
            return b"".join(kernel.pack_dirent(i.ino, i.offset, i.name, i.dtype) for i in items)
        if op == Opcode.STATFS:
            return ops.fs_statfs()
        if op == Opcode.ACCESS:
            mask, _ = kernel.ACCESS_IN.unpack_from(payload)
            ops.fs_access(h.nodeid, mask)
            return b""
        if op == Opcode.UNLINK:
            ops.fs_unlink(h.nodeid, kernel.parse_name(payload))
            return b""
        if op in (Opcode.FLUSH, Opcode.FSYNC, Opcode.FSYNCDIR):
            return b""
        if op in kernel.MUTATING:
            raise FuseError(errno.EROFS)
        raise FuseError(errno.ENOSYS)


def _opname(opcode: int) -> str:
    try:
        return Opcode(opcode).name
    except ValueError:
        return f"opcode {opcode}"


class MountedFilesystem:
    """Mount ``ops`` at ``mountpoint`` and serve it from a background thread."""

    def __init__(self, ops: Operations, mountpoint: str, workers: int = 32, allow_other: bool = False) -> None:
        self.ops = ops
        self.mountpoint = os.path.abspath(mountpoint)
        self.workers = workers
        self.allow_other = allow_other
        self.session: FuseSession | None = None
        self.thread: threading.Thread | None = None

    def start(self) -> MountedFilesystem:
        fd = mount(self.mountpoint, self.allow_other)
        self.session = FuseSession(self.ops, fd, self.workers)
        self.thread = self.session.start()
        return self

    def wait(self) -> None:
        if self.thread is not None:
            self.thread.join()

    def stop(self, timeout: float = 10.0) -> None:
        if os.path.ismount(self.mountpoint):
            try:
                unmount(self.mountpoint)
            except OSError:
                unmount(self.mountpoint, lazy=True)
        if self.thread is not None:
            self.thread.join(timeout)

    def __enter__(self) -> MountedFilesystem:
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()
