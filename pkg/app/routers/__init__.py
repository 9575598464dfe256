"""Routers package for API endpoint modules."""

__all__ = ["runs", "sweeps", "verify"]
