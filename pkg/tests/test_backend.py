import threading
import time

import pytest

from archivefs.backend import MemoryBlob, StreamingBlob
from archivefs.cache import Kind
from archivefs.client import NotFound, TransportError
from archivefs.mock.fixture import GOLDEN_ORIGIN, HELLO_C, FixtureSpec, generate_fixture
from archivefs.mock.server import ServerOptions
from archivefs.swhid import SWHID, ObjectType, parse_swhid

HELLO = parse_swhid("swh:1:cnt:c839dea9e8e6f0528b468214348fee8669b305b2")


def test_metadata_fetched_once(golden, make_stack):
    s = make_stack(golden)
    head = golden.manifest.head
    assert s.backend.revision(head).id == head
    assert s.backend.revision(head).id == head
    assert len(s.server.requests("revision")) == 1


def test_metadata_served_offline(golden, make_stack):
    s = make_stack(golden)
    s.backend.revision(golden.manifest.head)
    s.server.stop()
    assert s.backend.revision(golden.manifest.head).id == golden.manifest.head
    with pytest.raises(TransportError):
        s.backend.revision(golden.manifest.root_commit)


def test_unknown_object_not_found(golden, make_stack):
    s = make_stack(golden)
    with pytest.raises(NotFound):
        s.backend.exists(SWHID(ObjectType.DIRECTORY, "e" * 40))
    with pytest.raises(NotFound):
        s.backend.exists(SWHID(ObjectType.REVISION, "e" * 40))


def test_blob_cached_after_download(golden, make_stack):
    s = make_stack(golden)
    assert s.backend.blob(HELLO) == HELLO_C
    deadline = time.monotonic() + 5
    while s.cache.get(Kind.BLOB, str(HELLO)) is None and time.monotonic() < deadline:
        time.sleep(0.01)
    assert s.cache.get(Kind.BLOB, str(HELLO)) == HELLO_C
    reader = s.backend.open_blob(HELLO)
    assert isinstance(reader, MemoryBlob)
    assert len(s.server.requests("content_raw")) == 1


def test_concurrent_opens_share_one_download(golden, make_stack):
    s = make_stack(golden, ServerOptions(delays={"content_raw": 0.3}))
    readers = []

    def open_and_read():
        r = s.backend.open_blob(HELLO)
        readers.append(r)
        assert r.read(0, 1 << 16) == HELLO_C

    threads = [threading.Thread(target=open_and_read) for _ in range(5)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert len(s.server.requests("content_raw")) == 1
    assert all(isinstance(r, StreamingBlob) for r in readers)
    for r in readers:
        r.close()


def test_random_slices_match_blob(seed42, make_stack):
    import random

    s = make_stack(seed42)
    rng = random.Random(3)
    blob_id, data = max(seed42.manifest.blobs.items(), key=lambda kv: len(kv[1]))
    reader = s.backend.open_blob(blob_id)
    try:
        for _ in range(200):
            off = rng.randint(0, len(data) + 10)
            size = rng.randint(0, 600)
            assert reader.read(off, size) == data[off:off + size]
    finally:
        reader.close()


def test_listing_is_lazy(make_stack):
    fx = generate_fixture(FixtureSpec(seed=1, commits=2, large_dir_entries=2500))
    s = make_stack(fx, ServerOptions(page_size=1000))
    listing = s.backend.listing(fx.manifest.large_dir)
    it = iter(listing)
    first = [next(it) for _ in range(10)]
    assert len(first) == 10 and listing.pages_fetched == 1
    assert len(s.server.requests("directory")) == 1
    assert len(listing.all()) == 2500 and listing.pages_fetched == 3
    # completed listings are written to the metadata cache
    assert s.cache.get(Kind.METADATA, str(fx.manifest.large_dir)) is not None


def test_listing_failure_is_not_cached_as_complete(make_stack):
    fx = generate_fixture(FixtureSpec(seed=1, commits=2, large_dir_entries=2500))
    s = make_stack(fx, ServerOptions(page_size=1000))
    listing = s.backend.listing(fx.manifest.large_dir)
    listing.ensure(1)
    s.server.options.error_rate["directory"] = 1.0
    with pytest.raises(TransportError):
        listing.all()
    with pytest.raises(TransportError):
        listing.all()
    assert s.cache.get(Kind.METADATA, str(fx.manifest.large_dir)) is None
    s.server.options.error_rate.clear()
    assert len(s.backend.listing(fx.manifest.large_dir).all()) == 2500


def test_find_stops_at_first_matching_page(make_stack):
    fx = generate_fixture(FixtureSpec(seed=1, commits=2, large_dir_entries=2500))
    s = make_stack(fx, ServerOptions(page_size=1000))
    listing = s.backend.listing(fx.manifest.large_dir)
    assert listing.find(b"entry-01500") is not None
    assert listing.pages_fetched == 2
    assert listing.find(b"nope") is None
    assert listing.pages_fetched == 3


def test_visits_refresh_and_offline_fallback(golden, make_stack):
    s = make_stack(golden)
    visits = s.backend.visits(GOLDEN_ORIGIN)
    assert len(visits) == 2
    s.server.stop()
    s.backend._visits_checked.clear()  # force a refresh attempt
    assert s.backend.visits(GOLDEN_ORIGIN) == visits
    assert s.backend.origins() == [GOLDEN_ORIGIN]


def test_history_cached(seed42, make_stack):
    s = make_stack(seed42)
    first = s.backend.history(seed42.manifest.head)
    assert s.backend.history(seed42.manifest.head) == first
    assert len(s.server.requests("graph")) == 1


def test_download_error_surfaces_on_read(golden, make_stack):
    s = make_stack(golden, ServerOptions(error_rate={"content_raw": 1.0}))
    with pytest.raises(TransportError):
        s.backend.open_blob(HELLO)
    assert s.cache.get(Kind.BLOB, str(HELLO)) is None
