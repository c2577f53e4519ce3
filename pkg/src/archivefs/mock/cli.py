"""``mock-archive serve``: run the mock archive API for manual exploration."""

from __future__ import annotations

import threading

import click

from archivefs.layout.paths import encode_origin
from archivefs.mock.fixture import FixtureSpec, generate_fixture, golden_fixture
from archivefs.mock.server import MockArchiveServer, ServerOptions


@click.group(context_settings={"help_option_names": ["-h", "--help"]})
def main() -> None:
    """Hermetic stand-in for the archive API."""


@main.command()
@click.option("--seed", type=int, default=42, show_default=True, help="Fixture generator seed.")
@click.option("--commits", type=click.IntRange(min=1), default=None, help="Number of commits to generate.")
@click.option("--golden", is_flag=True, help="Serve the small hand-written fixture instead.")
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=click.IntRange(0, 65535), default=5080, show_default=True)
@click.option("--page-size", type=click.IntRange(min=1), default=1000, show_default=True)
@click.option("--no-graph", is_flag=True, help="Disable the graph traversal endpoint.")
def serve(seed: int, commits: int | None, golden: bool, host: str, port: int, page_size: int, no_graph: bool) -> None:
    """Serve a generated fixture archive over HTTP until interrupted."""
    if golden:
        fixture = golden_fixture()
    else:
        spec = FixtureSpec(seed=seed) if commits is None else FixtureSpec(seed=seed, commits=commits)
        fixture = generate_fixture(spec)
    options = ServerOptions(page_size=page_size, graph_enabled=not no_graph)
    server = MockArchiveServer(fixture.archive, options, host, port)
    try:
        url = server.start()
    except OSError as exc:
        raise click.ClickException(f"cannot listen on {host}:{port}: {exc.strerror}") from None
    m = fixture.manifest
    click.echo(f"serving {m.object_count} objects at {url}")
    click.echo(f"  head commit: {m.head}")
    if m.snapshot is not None:
        click.echo(f"  snapshot:    {m.snapshot}")
    for origin in sorted(m.origins):
        click.echo(f"  origin:      origin/{encode_origin(origin)}")
    try:
        threading.Event().wait()
    except KeyboardInterrupt:
        pass
    finally:
        server.stop()


if __name__ == "__main__":
    main()
