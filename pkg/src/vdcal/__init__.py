"""Exact validity/diversity and precision/recall diagnostics for truncated decoding."""

__version__ = "0.1.0"
