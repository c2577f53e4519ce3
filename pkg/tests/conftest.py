from __future__ import annotations

import os
import shutil
from dataclasses import dataclass

import pytest

from archivefs.backend import Backend
from archivefs.cache import DirEntryCache, PersistentCache
from archivefs.client import ArchiveClient
from archivefs.fuse import MountedFilesystem, Operations
from archivefs.layout import Layout
from archivefs.mock.fixture import Fixture, FixtureSpec, generate_fixture, golden_fixture
from archivefs.mock.server import MockArchiveServer, ServerOptions


def pytest_collection_modifyitems(config, items):
    if os.environ.get("ARCHIVEFS_LIVE") == "1":
        return
    skip = pytest.mark.skip(reason="live archive tests need ARCHIVEFS_LIVE=1")
    for item in items:
        if "live" in item.keywords:
            item.add_marker(skip)


def mount_supported() -> bool:
    if not os.path.exists("/dev/fuse"):
        return False
    return os.geteuid() == 0 or bool(shutil.which("fusermount3") or shutil.which("fusermount"))


requires_mount = pytest.mark.skipif(not mount_supported(), reason="FUSE mounting unavailable")


@dataclass
class Stack:
    fixture: Fixture
    server: MockArchiveServer
    client: ArchiveClient
    cache: PersistentCache
    backend: Backend
    layout: Layout
    ops: Operations

    @property
    def manifest(self):
        return self.fixture.manifest

    def close(self) -> None:
        self.backend.close()
        self.client.close()
        self.cache.close()


@pytest.fixture(scope="session")
def golden() -> Fixture:
    return golden_fixture()


@pytest.fixture(scope="session")
def seed42() -> Fixture:
    return generate_fixture(FixtureSpec(seed=42))


@pytest.fixture
def make_server():
    servers = []

    def make(fixture: Fixture, options: ServerOptions | None = None) -> MockArchiveServer:
        server = MockArchiveServer(fixture.archive, options)
        server.start()
        servers.append(server)
        return server

    yield make
    for server in servers:
        server.stop()


@pytest.fixture
def make_stack(tmp_path, make_server):
    stacks = []

    def make(fixture: Fixture, options: ServerOptions | None = None, cache_dir=None, retries: int = 0,
             **client_kw) -> Stack:
        server = make_server(fixture, options)
        client = ArchiveClient(server.base_url, retries=retries, backoff=0.01, timeout=(2, 10), **client_kw)
        cache = PersistentCache(cache_dir or tmp_path / f"cache{len(stacks)}")
        backend = Backend(client, cache, DirEntryCache())
        layout = Layout(backend)
        stack = Stack(fixture, server, client, cache, backend, layout, Operations(layout))
        stacks.append(stack)
        return stack

    yield make
    for stack in stacks:
        stack.close()


@pytest.fixture
def mount_stack(tmp_path):
    """Mount a :class:`Stack` and return the mount point; unmounted at teardown."""
    if not mount_supported():
        pytest.skip("FUSE mounting unavailable")
    mounts = []

    def mount(stack: Stack) -> str:
        mountpoint = tmp_path / f"mnt{len(mounts)}"
        mountpoint.mkdir()
        fs = MountedFilesystem(stack.ops, str(mountpoint)).start()
        mounts.append(fs)
        return str(mountpoint)

    yield mount
    for fs in mounts:
        fs.stop()


# Outcome lines of the acceptance criteria, echoed in the terminal summary.
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
