import time

import requests

from archivefs.mock.fixture import GOLDEN_ORIGIN, HELLO_C
from archivefs.mock.server import MockArchiveServer, ServerOptions

HELLO = "c839dea9e8e6f0528b468214348fee8669b305b2"


def test_raw_content_and_metadata(golden, make_server):
    base = make_server(golden).base_url
    r = requests.get(f"{base}content/sha1_git:{HELLO}/raw/")
    assert r.status_code == 200 and r.content == HELLO_C
    assert int(r.headers["Content-Length"]) == len(HELLO_C)
    meta = requests.get(f"{base}content/sha1_git:{HELLO}/").json()
    assert meta["length"] == len(HELLO_C)


def test_unknown_object_and_endpoint_404(golden, make_server):
    base = make_server(golden).base_url
    assert requests.get(f"{base}content/sha1_git:{'0' * 40}/raw/").status_code == 404
    assert requests.get(f"{base}revision/{'0' * 40}/").status_code == 404
    assert requests.get(f"{base}nonsense/").status_code == 404


def test_graph_rejects_bad_identifier(golden, make_server):
    base = make_server(golden).base_url
    assert requests.get(f"{base}graph/visit/nodes/swh:1:rev:zz/").status_code == 400


def test_graph_lines(golden, make_server):
    server = make_server(golden)
    m = golden.manifest
    text = requests.get(f"{server.base_url}graph/visit/nodes/{m.head}/", params={"edges": "rev:rev"}).text
    nodes = [line.split()[0] for line in text.splitlines()]
    assert sorted(nodes) == sorted(str(c) for c in m.commits)
    server.options.graph_dates = False
    text = requests.get(f"{server.base_url}graph/visit/nodes/{m.head}/").text
    assert all(len(line.split()) == 1 for line in text.splitlines())


def test_request_log_timeline(golden, make_server):
    server = make_server(golden, ServerOptions(delays={"revision": 0.2}))
    requests.get(f"{server.base_url}revision/{golden.manifest.head.hash}/")
    (rec,) = server.requests("revision")
    assert rec.status == 200
    assert rec.finished - rec.started >= 0.2
    server.clear_log()
    assert server.requests() == []


def test_per_object_delay(golden, make_server):
    server = make_server(golden, ServerOptions(object_delays={HELLO: 0.3}))
    start = time.monotonic()
    requests.get(f"{server.base_url}content/sha1_git:{'0' * 40}/raw/")
    assert time.monotonic() - start < 0.25
    start = time.monotonic()
    requests.get(f"{server.base_url}content/sha1_git:{HELLO}/raw/")
    assert time.monotonic() - start >= 0.3


def test_rate_limit_header(golden, make_server):
    server = make_server(golden, ServerOptions(rate_limit={"content_raw": 1}, retry_after=7))
    first = requests.get(f"{server.base_url}content/sha1_git:{HELLO}/raw/")
    assert first.status_code == 429 and first.headers["Retry-After"] == "7"
    assert requests.get(f"{server.base_url}content/sha1_git:{HELLO}/raw/").status_code == 200


def test_error_rate_is_seeded(golden):
    def statuses(seed):
        with MockArchiveServer(golden.archive, ServerOptions(error_rate={"revision": 0.5}, seed=seed)) as s:
            return [requests.get(f"{s.base_url}revision/{golden.manifest.head.hash}/").status_code
                    for _ in range(20)]

    a = statuses(1)
    assert a == statuses(1)
    assert set(a) == {200, 503}


def test_directory_next_link(seed42, make_server):
    fx = seed42
    tree = max(fx.manifest.trees, key=lambda t: len(fx.manifest.trees[t]))
    server = make_server(fx, ServerOptions(page_size=2))
    r = requests.get(f"{server.base_url}directory/{tree.hash}/")
    assert len(r.json()) == 2
    assert "offset=2" in r.links["next"]["url"]


def test_visits_and_search(golden, make_server):
    base = make_server(golden).base_url
    encoded = requests.utils.quote(GOLDEN_ORIGIN, safe="")
    visits = requests.get(f"{base}origin/{encoded}/visits/").json()
    assert len(visits) == 2
    hits = requests.get(f"{base}origin/search/golden/", params={"limit": 1}).json()
    assert hits == [{"url": GOLDEN_ORIGIN}]


def test_concurrent_service(golden, make_server):
    from concurrent.futures import ThreadPoolExecutor

    server = make_server(golden, ServerOptions(delays={"content_raw": 0.3}))
    url = f"{server.base_url}content/sha1_git:{HELLO}/raw/"
    start = time.monotonic()
    with ThreadPoolExecutor(8) as pool:
        results = list(pool.map(lambda _: requests.get(url).content, range(8)))
    assert results == [HELLO_C] * 8
    assert time.monotonic() - start < 1.5
    assert len(server.requests("content_raw")) == 8


def test_serve_cli_help():
    from click.testing import CliRunner

    from archivefs.mock.cli import main

    result = CliRunner().invoke(main, ["serve", "--help"])
    assert result.exit_code == 0 and "--seed" in result.output and "--port" in result.output
