import json
import posixpath
from datetime import datetime, timedelta, timezone

import pytest

from archivefs.backend import render_document
from archivefs.layout import PAGE_SIZE, NodeKind, NoEntry, NotADirectory, relative_symlink
from archivefs.layout import history as history_mod
from archivefs.layout.paths import decode_origin, encode_origin
from archivefs.mock.fixture import (
    GOLDEN_ORIGIN,
    HELLO_C,
    ArchiveBuilder,
    FixtureSpec,
    generate_fixture,
)
from archivefs.model import Perm
from archivefs.swhid import SWHID, ObjectType, parse_swhid

from oracles import by_date_groups, expected_entry, git_log_order, reachable

HELLO = "swh:1:cnt:c839dea9e8e6f0528b468214348fee8669b305b2"


def names(layout, path):
    return [n.decode("utf-8", "surrogateescape") for n in layout.listdir(path)]


def a(swhid):
    return ("archive", str(swhid))


# -- entry points -------------------------------------------------------------

def test_root_entries(golden, make_stack):
    layout = make_stack(golden).layout
    assert sorted(names(layout, [])) == ["README", "archive", "cache", "origin"]
    readme = layout.resolve(["README"])
    assert readme.kind is NodeKind.REGULAR and b"archive/" in readme.content()


def test_archive_is_unlistable(golden, make_stack):
    layout = make_stack(golden).layout
    assert names(layout, ["archive"]) == []


@pytest.mark.parametrize("name", ["swh:1:xxx:junk", "swh:1:cnt:" + "A" * 40, "foo", "swh:1:cnt:" + "0" * 40])
def test_bad_or_unknown_identifiers(golden, make_stack, name):
    layout = make_stack(golden).layout
    with pytest.raises(NoEntry):
        layout.resolve(["archive", name])


def test_content_node(golden, make_stack):
    layout = make_stack(golden).layout
    node = layout.resolve(["archive", HELLO])
    assert node.kind is NodeKind.REGULAR
    assert node.size() == len(HELLO_C)
    assert node.perm == 0o444
    assert node.content() == HELLO_C


def test_json_siblings(golden, make_stack):
    s = make_stack(golden)
    m = golden.manifest
    objects = [parse_swhid(HELLO), m.head, next(iter(m.trees)), next(iter(m.releases)), m.snapshot]
    for swhid in objects:
        node = s.layout.resolve(["archive", f"{swhid}.json"])
        assert node.kind is NodeKind.REGULAR
        doc = json.loads(node.content())
        assert node.content() == render_document(s.client.document(swhid))
        assert doc is not None
    with pytest.raises(NoEntry):
        s.layout.resolve(["archive", "swh:1:rev:" + "0" * 40 + ".json"])


def test_not_a_directory(golden, make_stack):
    layout = make_stack(golden).layout
    with pytest.raises(NotADirectory):
        layout.resolve(["README", "x"])


# -- revisions --------------------------------------------------------------------

def test_revision_listing(golden, make_stack):
    layout = make_stack(golden).layout
    m = golden.manifest
    rev = m.head
    assert names(layout, a(rev)) == ["history", "meta.json", "parent", "parents", "root"]
    root = layout.resolve([*a(rev), "root"])
    assert root.kind is NodeKind.SYMLINK
    assert root.target() == f"../{m.commits[rev].tree}".encode()
    assert layout.resolve([*a(rev), "meta.json"]).target() == f"../{rev}.json".encode()
    assert layout.resolve([*a(rev), "parent"]).target() == b"parents/1"
    parent = m.commits[rev].parents[0]
    assert layout.resolve([*a(rev), "parents", "1"]).target() == f"../../{parent}".encode()


def test_root_commit_has_no_parent(golden, make_stack):
    layout = make_stack(golden).layout
    rev = golden.manifest.root_commit
    assert "parent" not in names(layout, a(rev))
    assert names(layout, [*a(rev), "parents"]) == []


def test_merge_commit_parents(seed42, make_stack):
    layout = make_stack(seed42).layout
    m = seed42.manifest
    merge = next(c for c, meta in m.commits.items() if len(meta.parents) == 2)
    assert names(layout, [*a(merge), "parents"]) == ["1", "2"]
    for i, p in enumerate(m.commits[merge].parents, start=1):
        assert layout.resolve([*a(merge), "parents", str(i)]).target() == f"../../{p}".encode()


def test_revision_mtime(golden, make_stack):
    layout = make_stack(golden).layout
    m = golden.manifest
    node = layout.resolve(a(m.head))
    assert node.mtime == m.commits[m.head].committer_date.timestamp()
    assert layout.resolve([*a(m.head), "root"]).mtime == node.mtime


# -- directories -----------------------------------------------------------------------

def check_directory(layout, manifest, tree):
    children = {n.name: n for n in layout.children(layout.resolve(a(tree)))}
    entries = manifest.trees[tree]
    assert [n for n in children] == [e.name for e in entries]
    for e in entries:
        node = children[e.name]
        want = expected_entry(manifest, e)
        if want["kind"] == "dir":
            assert node.kind is NodeKind.DIRECTORY and node.perm == 0o555
        elif want["kind"] == "file":
            assert node.kind is NodeKind.REGULAR
            assert node.perm == want["mode"]
            assert node.size() == len(want["data"])
        elif "text" in want:
            assert node.kind is NodeKind.SYMLINK and node.target() == want["text"]
            assert node.size() == len(want["text"])
        else:
            assert node.kind is NodeKind.SYMLINK
            assert node.target() == f"../{want['archive_target']}".encode()


def test_every_fixture_directory_matches_manifest(seed42, make_stack):
    s = make_stack(seed42)
    for tree in seed42.manifest.trees:
        check_directory(s.layout, seed42.manifest, tree)


def test_file_contents_match(golden, make_stack):
    layout = make_stack(golden).layout
    for tree, entries in golden.manifest.trees.items():
        for e in entries:
            if e.perm in (Perm.FILE, Perm.EXECUTABLE_FILE):
                assert layout.resolve([*a(tree), e.name]).content() == golden.manifest.blobs[e.target]


def test_empty_directory(make_stack):
    fx = generate_fixture(FixtureSpec.empty())
    layout = make_stack(fx).layout
    (tree,) = fx.manifest.trees
    assert names(layout, a(tree)) == []


def test_nested_resolution_through_root(golden, make_stack):
    layout = make_stack(golden).layout
    m = golden.manifest
    link = layout.resolve([*a(m.head), "root"])
    with pytest.raises(NotADirectory):
        layout.resolve([*a(m.head), "root", "src"])  # the resolver never follows links
    target = posixpath.normpath(posixpath.join("archive", m.head.__str__(), link.target().decode()))
    node = layout.resolve([*target.split("/"), "src", "hello.c"])
    assert node.content() == HELLO_C


def test_rendering_is_deterministic(seed42, make_stack):
    s1, s2 = make_stack(seed42), make_stack(seed42)
    for tree in list(seed42.manifest.trees)[:30]:
        def describe(layout):
            return [(n.name, n.kind, n.perm, n.size()) for n in layout.children(layout.resolve(a(tree)))]
        assert describe(s1.layout) == describe(s1.layout) == describe(s2.layout)


# -- symlinks ------------------------------------------------------------------------

@pytest.mark.parametrize(
    "from_dir, expected",
    [
        (("archive", "swh:1:rev:" + "1" * 40), "../"),
        (("archive", "swh:1:rev:" + "1" * 40, "parents"), "../../"),
        (("archive",), ""),
        (("origin", "x", "2024-01-01"), "../../../archive/"),
        (("cache", "ab"), "../../archive/"),
    ],
)
def test_relative_symlink(from_dir, expected):
    target = SWHID(ObjectType.DIRECTORY, "2" * 40)
    text = relative_symlink(tuple(p.encode() for p in from_dir), target)
    assert text == expected + str(target)
    assert posixpath.normpath(posixpath.join(*from_dir, text)) == f"archive/{target}"


def walk_links(layout, start, limit=400):
    """Collect (link path, target text) below ``start`` without following links."""
    out, stack = [], [start]
    while stack and len(out) < limit:
        node = stack.pop()
        for child in layout.children(node):
            if child.kind is NodeKind.SYMLINK:
                out.append((child.path, child.target()))
            elif child.kind is NodeKind.DIRECTORY and child.swhid is None or (
                child.kind is NodeKind.DIRECTORY and child.swhid.object_type is not ObjectType.DIRECTORY
            ):
                stack.append(child)
    return out


def test_every_rendered_symlink_resolves(golden, make_stack):
    layout = make_stack(golden).layout
    m = golden.manifest
    starts = [a(m.head), a(next(iter(m.releases))), a(m.snapshot), ["origin", encode_origin(GOLDEN_ORIGIN)]]
    links = []
    for start in starts:
        links.extend(walk_links(layout, layout.resolve(start)))
    layout.population(m.head).wait(10)
    links.extend(walk_links(layout, layout.resolve([*a(m.head), "history"])))
    assert len(links) > 20
    for path, target in links:
        if path[-1] == b"README.link":
            continue  # archived symlink: text is data, not a layout link
        parent = b"/".join(path[:-1]).decode()
        resolved = posixpath.normpath(posixpath.join(parent, target.decode()))
        assert not resolved.startswith(".."), (path, target)
        node = layout.resolve(resolved.split("/"))
        assert node is not None


# -- releases -----------------------------------------------------------------------

def test_release_rendering(golden, make_stack):
    layout = make_stack(golden).layout
    m = golden.manifest
    (rel,) = m.releases
    assert names(layout, a(rel)) == ["meta.json", "target", "target_type", "root"]
    assert layout.resolve([*a(rel), "target"]).target() == f"../{m.head}".encode()
    assert layout.resolve([*a(rel), "target_type"]).content() == b"revision\n"
    assert layout.resolve([*a(rel), "root"]).target() == f"../{m.commits[m.head].tree}".encode()


# -- snapshots -------------------------------------------------------------------------

def test_snapshot_nesting(golden, make_stack):
    layout = make_stack(golden).layout
    snp = a(golden.manifest.snapshot)
    assert names(layout, snp) == ["HEAD", "refs"]
    assert names(layout, [*snp, "refs"]) == ["heads", "tags"]
    assert names(layout, [*snp, "refs", "heads"]) == ["Bell-Release", "feature", "main"]
    bell = layout.resolve([*snp, "refs", "heads", "Bell-Release"])
    assert bell.target() == f"../../../{golden.manifest.root_commit}".encode()
    assert layout.resolve([*snp, "HEAD"]).target() == b"refs/heads/main"


def test_snapshot_edge_cases(make_stack):
    b = ArchiveBuilder()
    tree = b.tree([])
    when = datetime(2021, 5, 1, tzinfo=timezone.utc)
    c1 = b.commit(tree, [], "Ada Lovelace", when, b"one\n")
    c2 = b.commit(tree, [c1], "Ada Lovelace", when + timedelta(hours=1), b"two\n")
    snp = b.snapshot(
        {b"top": c1, b"refs/heads/x": c1, b"refs/heads/x/y": c2, b"bad//name": c2},
        {b"loop1": b"loop2", b"loop2": b"loop1", b"dangling": b"refs/heads/nope", b"alias/deep": b"top"},
    )
    fx = b.fixture()
    layout = make_stack(fx).layout
    assert names(layout, a(snp)) == ["alias", "refs", "top"]
    assert layout.resolve([*a(snp), "top"]).target() == f"../{c1}".encode()
    # "refs/heads/x" is both a leaf and a directory: the directory wins
    x = layout.resolve([*a(snp), "refs", "heads", "x"])
    assert x.kind is NodeKind.DIRECTORY
    assert names(layout, [*a(snp), "refs", "heads", "x"]) == ["y"]
    assert layout.resolve([*a(snp), "alias", "deep"]).target() == b"../top"


def test_empty_snapshot(make_stack):
    b = ArchiveBuilder()
    snp = b.snapshot({})
    layout = make_stack(b.fixture()).layout
    assert names(layout, a(snp)) == []


# -- origins -----------------------------------------------------------------------------

def test_origin_visits_same_day(golden, make_stack):
    layout = make_stack(golden).layout
    origin = ["origin", encode_origin(GOLDEN_ORIGIN)]
    assert names(layout, origin) == ["2024-01-01", "2024-01-01.2"]
    for visit in ("2024-01-01", "2024-01-01.2"):
        assert names(layout, [*origin, visit]) == ["meta.json", "snapshot"]
        link = layout.resolve([*origin, visit, "snapshot"]).target()
        assert link == f"../../../archive/{golden.manifest.snapshot}".encode()
        doc = json.loads(layout.resolve([*origin, visit, "meta.json"]).content())
        assert doc["origin"] == GOLDEN_ORIGIN
    assert names(layout, ["origin"]) == [encode_origin(GOLDEN_ORIGIN)]


def test_failed_visit_omitted(seed42, make_stack):
    layout = make_stack(seed42).layout
    visits = names(layout, ["origin", encode_origin("https://example.org/linux")])
    assert len(visits) == 3


def test_origin_lookup_rules(golden, make_stack):
    layout = make_stack(golden).layout
    with pytest.raises(NoEntry):
        layout.resolve(["origin", encode_origin("https://example.org/unknown")])
    # the raw URL cannot even be a path component; a partially encoded one is refused
    with pytest.raises(NoEntry):
        layout.resolve(["origin", "https:%2F%2Fexample.org%2Fgolden.git"])
    with pytest.raises(NoEntry):
        layout.resolve(["origin", "https%3a%2f%2fexample.org%2fgolden.git"])


@pytest.mark.parametrize("url", ["https://github.com/torvalds/linux", "https://x.org/a b?c=d&e#f", "https://é.org/ü"])
def test_origin_encoding_round_trip(url):
    enc = encode_origin(url)
    assert "/" not in enc
    assert decode_origin(enc) == url


# -- history views -----------------------------------------------------------------------

def history_leaves(layout, rev):
    base = [*a(rev), "history"]
    pages = names(layout, [*base, "by-page"])
    by_page = [n for p in pages for n in names(layout, [*base, "by-page", p])]
    by_hash = {}
    for shard in names(layout, [*base, "by-hash"]):
        for n in names(layout, [*base, "by-hash", shard]):
            by_hash[n] = shard
    by_date = {}
    for y in names(layout, [*base, "by-date"]):
        if y == ".status":
            continue
        for mo in names(layout, [*base, "by-date", y]):
            for d in names(layout, [*base, "by-date", y, mo]):
                for n in names(layout, [*base, "by-date", y, mo, d]):
                    by_date[n] = (y, mo, d)
    return pages, by_page, by_hash, by_date


def test_history_views_match_oracles(seed42, make_stack):
    s = make_stack(seed42)
    m = seed42.manifest
    rev = m.head
    assert names(s.layout, [*a(rev), "history"]) == ["by-date", "by-hash", "by-page"]
    assert s.layout.population(rev).wait(20)
    pages, by_page, by_hash, by_date = history_leaves(s.layout, rev)
    expected = [str(x) for x in git_log_order(m, reachable(m, rev))]
    assert pages == ["000"]
    assert by_page == expected
    assert set(by_hash) == set(expected)
    assert all(shard == name.split(":")[3][:2] for name, shard in by_hash.items())
    assert set(by_date) == set(expected)
    groups = by_date_groups(m, reachable(m, rev))
    assert {n: k for k, members in groups.items() for n in map(str, members)} == by_date
    assert ".status" not in names(s.layout, [*a(rev), "history", "by-date"])


def test_history_links_point_into_archive(golden, make_stack):
    layout = make_stack(golden).layout
    rev = golden.manifest.head
    (first,) = names(layout, [*a(rev), "history", "by-page"])
    leaf = names(layout, [*a(rev), "history", "by-page", first])[0]
    assert layout.resolve([*a(rev), "history", "by-page", first, leaf]).target() == f"../../../../{leaf}".encode()


def test_by_date_status_while_populating(seed42, make_stack):
    from archivefs.mock.server import ServerOptions

    s = make_stack(seed42, ServerOptions(delays={"revision": 0.05}))
    rev = seed42.manifest.head
    entries = names(s.layout, [*a(rev), "history", "by-date"])
    assert entries[0] == ".status"
    status = s.layout.resolve([*a(rev), "history", "by-date", ".status"]).content()
    done, total = map(int, status.decode().strip().split("/"))
    assert total == len(reachable(seed42.manifest, rev)) and 0 <= done < total
    assert status.endswith(b"\n")
    assert s.layout.population(rev).wait(60)
    assert ".status" not in names(s.layout, [*a(rev), "history", "by-date"])


def test_paging(monkeypatch, seed42, make_stack):
    monkeypatch.setattr(history_mod, "PAGE_SIZE", 7)
    s = make_stack(seed42)
    m = seed42.manifest
    expected = [str(x) for x in git_log_order(m, reachable(m, m.head))]
    pages = names(s.layout, [*a(m.head), "history", "by-page"])
    assert pages == [f"{i:03d}" for i in range(-(-len(expected) // 7))]
    joined = [n for p in pages for n in names(s.layout, [*a(m.head), "history", "by-page", p])]
    assert joined == expected
    assert PAGE_SIZE == 10_000


def test_root_commit_history_is_empty(golden, make_stack):
    layout = make_stack(golden).layout
    rev = golden.manifest.root_commit
    assert layout.population(rev).wait(5)
    pages, by_page, by_hash, by_date = history_leaves(layout, rev)
    assert pages == [] and by_page == [] and by_hash == {} and by_date == {}


# -- cache/ ----------------------------------------------------------------------------

def test_cache_view_and_unlink(golden, make_stack):
    s = make_stack(golden)
    assert names(s.layout, ["cache"]) == []
    s.layout.resolve(["archive", HELLO]).content()
    shard = HELLO.split(":")[3][:2]
    assert shard in names(s.layout, ["cache"])
    assert HELLO in names(s.layout, ["cache", shard])
    link = s.layout.resolve(["cache", shard, HELLO])
    assert link.target() == f"../../archive/{HELLO}".encode()
    shard_node = s.layout.resolve(["cache", shard])
    shard_node.unlink(HELLO.encode())
    assert s.cache.get("blob", HELLO) is None
    assert shard not in names(s.layout, ["cache"])  # empty shards vanish
    with pytest.raises(NoEntry):
        shard_node.unlink(HELLO.encode())
    with pytest.raises(NoEntry):
        s.layout.resolve(["cache", shard])
    # still readable: fetched again on demand
    assert s.layout.resolve(["archive", HELLO]).content() == HELLO_C
