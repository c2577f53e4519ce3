"""End-to-end checks through a real kernel mount."""

import errno
import os
import stat
import subprocess

import pytest

from archivefs.fuse import MountedFilesystem, MountpointBusy, check_mountpoint
from archivefs.layout.paths import encode_origin
from archivefs.mock.fixture import GOLDEN_ORIGIN, HELLO_C
from archivefs.model import Perm

from conftest import requires_mount
from oracles import git_log_order, reachable

pytestmark = [requires_mount, pytest.mark.mount]

HELLO = "swh:1:cnt:c839dea9e8e6f0528b468214348fee8669b305b2"


def is_mounted(path):
    real = os.path.realpath(path)
    with open("/proc/self/mounts") as f:
        return any(line.split()[1] == real for line in f)


def test_basic_tree(golden, make_stack, mount_stack):
    mnt = mount_stack(make_stack(golden))
    assert sorted(os.listdir(mnt)) == ["README", "archive", "cache", "origin"]
    assert os.listdir(f"{mnt}/archive") == []
    with open(f"{mnt}/archive/{HELLO}", "rb") as f:
        assert f.read() == HELLO_C
    head = golden.manifest.head
    assert os.readlink(f"{mnt}/archive/{head}/root") == f"../{golden.manifest.commits[head].tree}"
    with open(f"{mnt}/archive/{head}/root/src/hello.c", "rb") as f:
        assert f.read() == HELLO_C
    assert os.path.realpath(f"{mnt}/archive/{head}/parent") == f"{mnt}/archive/{golden.manifest.commits[head].parents[0]}"
    origin = f"{mnt}/origin/{encode_origin(GOLDEN_ORIGIN)}"
    assert sorted(os.listdir(origin)) == ["2024-01-01", "2024-01-01.2"]
    assert os.path.isdir(f"{origin}/2024-01-01.2/snapshot/refs/heads/main/root")


def test_modes_and_exec_bits(golden, make_stack, mount_stack):
    mnt = mount_stack(make_stack(golden))
    m = golden.manifest
    for tree, entries in m.trees.items():
        for e in entries:
            st = os.lstat(f"{mnt}/archive/{tree}/{e.name.decode()}")
            if e.perm == Perm.EXECUTABLE_FILE:
                assert stat.S_IMODE(st.st_mode) == 0o555 and os.access(f"{mnt}/archive/{tree}/{e.name.decode()}", os.X_OK)
            elif e.perm == Perm.FILE:
                assert stat.S_IMODE(st.st_mode) == 0o444
                assert st.st_size == len(m.blobs[e.target])
            elif e.perm == Perm.SUBDIRECTORY:
                assert stat.S_ISDIR(st.st_mode)
            elif e.perm == Perm.SYMLINK:
                assert stat.S_ISLNK(st.st_mode)


def test_read_only(golden, make_stack, mount_stack):
    mnt = mount_stack(make_stack(golden))
    for attempt in (
        lambda: os.mkdir(f"{mnt}/archive/new"),
        lambda: open(f"{mnt}/archive/{HELLO}", "wb"),
        lambda: os.rename(f"{mnt}/README", f"{mnt}/R"),
        lambda: os.unlink(f"{mnt}/README"),
        lambda: os.symlink("x", f"{mnt}/origin/x"),
        lambda: os.chmod(f"{mnt}/README", 0o777),
    ):
        with pytest.raises(OSError) as info:
            attempt()
        assert info.value.errno in (errno.EROFS, errno.EACCES, errno.EPERM)


def test_cache_unlink(golden, make_stack, mount_stack):
    s = make_stack(golden)
    mnt = mount_stack(s)
    with open(f"{mnt}/archive/{HELLO}", "rb") as f:
        f.read()
    shard = f"{mnt}/cache/{HELLO[10:12]}"
    assert HELLO in os.listdir(shard)
    os.unlink(f"{shard}/{HELLO}")
    assert s.cache.get("blob", HELLO) is None


def test_unknown_identifier_enoent(golden, make_stack, mount_stack):
    mnt = mount_stack(make_stack(golden))
    assert not os.path.exists(f"{mnt}/archive/swh:1:cnt:" + "0" * 40)
    assert not os.path.exists(f"{mnt}/archive/not-an-id")


def test_double_mount_refused(golden, make_stack, mount_stack):
    s = make_stack(golden)
    mnt = mount_stack(s)
    with pytest.raises(MountpointBusy):
        check_mountpoint(mnt)
    with pytest.raises(MountpointBusy):
        MountedFilesystem(s.ops, mnt).start()


def test_mount_unmount_twice_leaves_nothing(golden, make_stack, tmp_path):
    s = make_stack(golden)
    mnt = tmp_path / "m"
    mnt.mkdir()
    for _ in range(2):
        with MountedFilesystem(s.ops, str(mnt)):
            assert is_mounted(mnt)
            assert "README" in os.listdir(mnt)
        assert not is_mounted(mnt)
        assert os.listdir(mnt) == []


def test_shell_tools(golden, make_stack, mount_stack):
    mnt = mount_stack(make_stack(golden))
    head = golden.manifest.head
    out = subprocess.run(["cat", f"{mnt}/archive/{head}/root/src/hello.c"], capture_output=True, check=True)
    assert out.stdout == HELLO_C
    out = subprocess.run(["ls", "-U", f"{mnt}/archive/{head}/history/by-page/000"], capture_output=True, text=True, check=True)
    m = golden.manifest
    assert out.stdout.split() == [str(c) for c in git_log_order(m, reachable(m, head))]
