"""Shared exception types."""


class ArrError(Exception):
    """Base class for every error raised by this package."""


class IoFailure(ArrError):
    """A file could not be read or written."""
