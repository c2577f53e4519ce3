"""Read-only user-space filesystem over a content-addressed software archive."""

__version__ = "0.1.0"
