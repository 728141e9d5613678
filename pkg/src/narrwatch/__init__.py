"""Track news narratives across dated, site-attributed article passages."""

__version__ = "0.1.0"
