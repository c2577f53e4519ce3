"""Command-line interface: ``archivefs fs mount|umount|clean`` and ``archivefs search``."""

from __future__ import annotations

import logging
import logging.handlers
import os
import signal
import sys
from datetime import datetime, timezone

import click

from archivefs.config import Config, ConfigError, load_config
from archivefs.layout.paths import encode_origin

log = logging.getLogger("archivefs")

SYSLOG_SOCKET = "/dev/log"


def _fail(message: str) -> click.ClickException:
    return click.ClickException(message.splitlines()[0] if message else "failed")


@click.group(context_settings={"help_option_names": ["-h", "--help"]})
@click.option("--config", "config_path", type=click.Path(dir_okay=False), envvar="ARCHIVEFS_CONFIG",
              help="Configuration file (YAML).")
@click.option("--api-url", help="Base URL of the archive API.")
@click.option("--cache-dir", type=click.Path(file_okay=False), help="Directory for the on-disk cache.")
@click.option("--token", "auth_token", help="API authentication token.")
@click.option("-v", "--verbose", is_flag=True, help="Debug logging.")
@click.pass_context
def main(ctx: click.Context, config_path, api_url, cache_dir, auth_token, verbose) -> None:
    """Browse a content-addressed software archive as a read-only filesystem."""
    flags = {"api_base_url": api_url, "cache_dir": cache_dir, "auth_token": auth_token}
    if verbose:
        flags["debug"] = True
    try:
        ctx.obj = load_config(config_path, flags)
    except ConfigError as exc:
        raise _fail(str(exc)) from None


@main.group()
def fs() -> None:
    """Mount, unmount and maintain the filesystem."""


def _setup_logging(config: Config, foreground: bool) -> None:
    root = logging.getLogger()
    for handler in list(root.handlers):
        root.removeHandler(handler)
    if foreground:
        handler: logging.Handler = logging.StreamHandler(sys.stderr)
        handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
    elif os.path.exists(SYSLOG_SOCKET):
        handler = logging.handlers.SysLogHandler(address=SYSLOG_SOCKET)
        handler.setFormatter(logging.Formatter("archivefs[%(process)d]: %(levelname)s %(message)s"))
    else:
        # No syslog daemon (typical in containers): log next to the cache.
        config.cache_dir.mkdir(parents=True, exist_ok=True)
        handler = logging.FileHandler(config.cache_dir / "archivefs.log")
        handler.setFormatter(logging.Formatter("%(asctime)s %(process)d %(levelname)s %(name)s: %(message)s"))
    root.addHandler(handler)
    root.setLevel(logging.DEBUG if config.debug else logging.INFO)
    # urllib3 is chatty at DEBUG
    logging.getLogger("urllib3").setLevel(logging.INFO)


def _serve(config: Config, mountpoint: str, allow_other: bool, ready=None) -> None:
    """Mount and serve until unmounted. ``ready`` is called once the mount is live."""
    from archivefs.backend import Backend
    from archivefs.cache import DirEntryCache, PersistentCache
    from archivefs.client import ArchiveClient
    from archivefs.fuse import FuseSession, Operations, mount, unmount
    from archivefs.layout import Layout

    client = ArchiveClient(config.api_base_url, config.auth_token, config.timeouts, config.retries)
    cache = PersistentCache(config.cache_dir, config.blob_size_limit, config.debug)
    backend = Backend(client, cache, DirEntryCache(config.direntry_capacity))
    try:
        fd = mount(mountpoint, allow_other)
        session = FuseSession(Operations(Layout(backend)), fd)

        def stop(signum, _frame):
            log.info("signal %d received, unmounting %s", signum, mountpoint)
            try:
                unmount(mountpoint, lazy=True)
            except Exception as exc:  # already gone
                log.debug("unmount on signal: %s", exc)

        signal.signal(signal.SIGTERM, stop)
        signal.signal(signal.SIGINT, stop)
        signal.signal(signal.SIGHUP, stop)
        log.info("mounted %s on %s", config.api_base_url, mountpoint)
        if ready is not None:
            ready()
        session.run()
        log.info("unmounted %s", mountpoint)
    finally:
        backend.close()
        cache.close()
        client.close()


def _daemonize(config: Config, mountpoint: str, allow_other: bool) -> None:
    """Double-fork; the parent returns once the daemon reports the mount is live."""
    read_end, write_end = os.pipe()
    pid = os.fork()
    if pid:
        os.close(write_end)
        with os.fdopen(read_end, "rb") as pipe:
            status = pipe.read()
        os.waitpid(pid, 0)
        if status != b"ok":
            raise _fail(status.decode(errors="replace").strip() or "daemon exited before mounting")
        return
    # first child
    code = 1
    try:
        os.close(read_end)
        os.setsid()
        if os.fork():
            code = 0
            return
        os.chdir("/")
        devnull = os.open(os.devnull, os.O_RDWR)
        for fd in (0, 1, 2):
            os.dup2(devnull, fd)
        _setup_logging(config, foreground=False)

        def ready():
            os.write(write_end, b"ok")
            os.close(write_end)

        try:
            _serve(config, mountpoint, allow_other, ready)
            code = 0
        except BaseException as exc:
            log.error("mount failed: %s", exc)
            try:
                os.write(write_end, str(exc).encode(errors="replace"))
            except OSError:
                pass
    finally:
        os._exit(code)


@fs.command("mount")
@click.argument("path", type=click.Path(file_okay=False))
@click.option("-f", "--foreground", is_flag=True, default=None, help="Stay attached and log to the console.")
@click.option("--allow-other", is_flag=True, help="Let other users access the mount.")
@click.pass_obj
def cmd_mount(config: Config, path: str, foreground, allow_other: bool) -> None:
    """Mount the archive at PATH."""
    from archivefs.fuse import FuseUnavailable, MountpointBusy, check_mountpoint

    config = config.merged({"foreground": foreground})
    mountpoint = os.path.abspath(path)
    try:
        check_mountpoint(mountpoint)
    except (MountpointBusy, OSError) as exc:
        raise _fail(str(exc)) from None
    try:
        if config.foreground:
            _setup_logging(config, foreground=True)
            _serve(config, mountpoint, allow_other)
        else:
            _daemonize(config, mountpoint, allow_other)
    except (FuseUnavailable, MountpointBusy, OSError) as exc:
        raise _fail(str(exc)) from None


@fs.command("umount")
@click.argument("path", type=click.Path())
@click.option("--lazy", is_flag=True, help="Detach now, clean up when no longer busy.")
def cmd_umount(path: str, lazy: bool) -> None:
    """Unmount the filesystem mounted at PATH."""
    from archivefs.fuse import NotMounted, unmount

    try:
        unmount(path, lazy=lazy)
    except (NotMounted, OSError) as exc:
        raise _fail(str(exc)) from None


def _parse_before(value: str) -> datetime:
    try:
        when = datetime.fromisoformat(value.replace("Z", "+00:00"))
    except ValueError:
        raise click.BadParameter(f"not an ISO 8601 date: {value!r}") from None
    return when if when.tzinfo else when.replace(tzinfo=timezone.utc)


@fs.command("clean")
@click.option("--all", "everything", is_flag=True, help="Empty the cache.")
@click.option("--before", help="Drop entries cached before this date (ISO 8601, UTC if no offset).")
@click.pass_obj
def cmd_clean(config: Config, everything: bool, before: str | None) -> None:
    """Remove entries from the on-disk cache."""
    from archivefs.cache import PersistentCache, StorageError

    if everything == (before is not None):
        raise click.UsageError("give exactly one of --all or --before")
    cutoff = None if everything else _parse_before(before)
    try:
        cache = PersistentCache(config.cache_dir, config.blob_size_limit)
        try:
            removed = cache.purge(cutoff)
        finally:
            cache.close()
    except StorageError as exc:
        raise _fail(str(exc)) from None
    click.echo(f"removed {removed} cache entries")


@main.command("search")
@click.argument("pattern")
@click.option("--limit", type=click.IntRange(min=1), default=10, show_default=True)
@click.option("--url-encode", is_flag=True, help="Print origins as percent-encoded path components.")
@click.pass_obj
def cmd_search(config: Config, pattern: str, limit: int, url_encode: bool) -> None:
    """Search archived origin URLs matching PATTERN."""
    from archivefs.client import ArchiveClient, ArchiveError, BadPattern

    client = ArchiveClient(config.api_base_url, config.auth_token, config.timeouts, config.retries)
    try:
        urls = client.search_origins(pattern, limit)
    except BadPattern as exc:
        raise click.BadParameter(str(exc), param_hint="PATTERN") from None
    except ArchiveError as exc:
        raise _fail(str(exc)) from None
    finally:
        client.close()
    for url in urls:
        click.echo(encode_origin(url) if url_encode else url)


if __name__ == "__main__":
    main()
