"""Shared exception base for the compiler.

Every stage raises a subclass of :class:`MicroforgeError` so the CLI can
distinguish expected diagnostics (exit code 1, message on stderr) from
genuine bugs (traceback).
"""


class MicroforgeError(Exception):
    """Base class for all diagnostics raised by this package."""
