"""Tender-notice extraction from e-newspaper pages."""

__version__ = "0.1.0"
