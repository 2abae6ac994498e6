"""HTTP service wrapping the selection engine."""

from .app import ServiceConfig, create_app

__all__ = ["ServiceConfig", "create_app"]
