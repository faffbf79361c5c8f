"""Shared exception types."""


class DataFormatError(ValueError):
    """Raised when tabular input does not match the expected schema."""


class FitError(RuntimeError):
    """Raised when an iterative fit fails or hits a degenerate configuration."""
