"""Offline extractor: render shapes, run mask/feature backends, write containers."""

__version__ = "0.1.0"
