"""Virtual filesystem layout: entry points, object renderings, history views."""

from archivefs.layout.engine import Layout, relative_symlink
from archivefs.layout.history import PAGE_SIZE, ByDatePopulation
from archivefs.layout.nodes import FOREVER, NEVER, NoEntry, NodeKind, NotADirectory, ReadOnly, VNode

__all__ = [
    "ByDatePopulation",
    "FOREVER",
    "Layout",
    "NEVER",
    "NoEntry",
    "NodeKind",
    "NotADirectory",
    "PAGE_SIZE",
    "ReadOnly",
    "VNode",
    "relative_symlink",
]
