"""Spectral phase-field gradient-flow lab.

Making `app` a package lets you run `python -m app.cli ...` or
`uvicorn app.main:app` from the project root.
"""
__all__ = ["main", "cli", "routers", "database", "models", "schemas", "services", "config"]
__version__ = "0.1.0"
