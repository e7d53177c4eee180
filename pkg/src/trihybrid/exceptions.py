"""Shared exception types."""


class ConfigurationError(Exception):
    """Invalid experiment or solver configuration."""


class GenerationError(RuntimeError):
    """Scenario geometry could not be generated (degenerate placement)."""


class ResolutionError(ValueError):
    """Quadrature grid too coarse for the requested operation."""
