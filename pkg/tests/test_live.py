"""Smoke tests against the public archive. Run with ARCHIVEFS_LIVE=1."""

import json

import pytest

from archivefs.backend import Backend
from archivefs.cache import DirEntryCache, PersistentCache
from archivefs.client import ArchiveClient, TransportError
from archivefs.config import load_config
from archivefs.layout import Layout

pytestmark = pytest.mark.live

HELLO = "swh:1:cnt:c839dea9e8e6f0528b468214348fee8669b305b2"
APOLLO_DIR = "swh:1:dir:1fee702c7e6d14395bbf5ac3598e73bcbf97b030"
JQUERY_REV = "swh:1:rev:9d76c0b163675505d1a901e5fe5249a2c55609bc"
UNIX_SNP = "swh:1:snp:2ca5d6eff8f04a671c0d5b13646cede522c64b7d"


@pytest.fixture(scope="module")
def layout(tmp_path_factory):
    config = load_config()
    client = ArchiveClient(config.api_base_url, config.auth_token, (10, 120), retries=3)
    cache = PersistentCache(tmp_path_factory.mktemp("live-cache"))
    backend = Backend(client, cache, DirEntryCache())
    yield Layout(backend)
    backend.close()
    cache.close()
    client.close()


def call(fn, *args):
    try:
        return fn(*args)
    except TransportError as exc:
        pytest.skip(f"archive unreachable: {exc}")


def test_hello_world(layout):
    data = call(lambda: layout.resolve(["archive", HELLO]).content())
    assert b"Hello, World!" in data


def test_apollo_directory(layout):
    names = call(layout.listdir, ["archive", APOLLO_DIR])
    assert len(names) == 127
    assert b"THE_LUNAR_LANDING.s" in names


def test_jquery_revision(layout):
    assert call(layout.listdir, ["archive", JQUERY_REV]) == [b"history", b"meta.json", b"parent", b"parents", b"root"]
    meta = json.loads(call(lambda: layout.resolve(["archive", JQUERY_REV + ".json"]).content()))
    assert meta["author"]["name"] == "Michal Golebiowski-Owczarek"
    assert meta["date"] == "2020-03-02T23:02:42+01:00"


def test_jquery_history(layout):
    page = call(layout.listdir, ["archive", JQUERY_REV, "history", "by-page", "000"])
    assert len(page) == 6469


def test_unix_snapshot(layout):
    heads = call(layout.listdir, ["archive", UNIX_SNP, "refs", "heads"])
    assert len(heads) == 40
    assert sorted(n for n in heads if b"Bell" in n) == [b"Bell-32V-Snapshot-Development", b"Bell-Release"]
