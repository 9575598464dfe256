"""Services package: numerics, diagnostics, oracles and the command layer."""

__all__ = [
    "errors",
    "spectral_core",
    "potential",
    "minimizing_movements",
    "interface_diagnostics",
    "sharp_limit_oracle",
    "scenarios",
    "snapshots",
    "campaigns",
]
