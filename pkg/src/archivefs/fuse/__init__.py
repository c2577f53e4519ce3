"""FUSE frontend: exposes a :class:`~archivefs.layout.Layout` as a mounted filesystem."""

from archivefs.fuse.ops import FuseError, Operations
from archivefs.fuse.session import (
    FuseSession,
    FuseUnavailable,
    MountedFilesystem,
    MountpointBusy,
    NotMounted,
    check_mountpoint,
    mount,
    unmount,
)

__all__ = [
    "FuseError", "FuseSession", "FuseUnavailable", "MountedFilesystem", "MountpointBusy",
    "NotMounted", "Operations", "check_mountpoint", "mount", "unmount",
]
