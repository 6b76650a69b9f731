"""Canonical security telemetry substrate."""

__version__ = "0.1.0"
