"""HTTP service wrapping a 2D image editor and an image/text embedder."""

__version__ = "0.1.0"

from .app import create_app

__all__ = ["create_app"]
