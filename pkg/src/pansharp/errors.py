"""Shared exception types for file containers and degenerate numeric inputs."""


class FormatError(Exception):
    """A file does not carry the expected magic bytes or version."""


class CorruptionError(Exception):
    """A file's declared layout disagrees with its actual contents."""


class DegenerateInputError(ValueError):
    """An input is numerically degenerate for the requested computation."""
