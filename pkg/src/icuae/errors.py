"""Exception types shared across the package.

The CLI maps these onto exit codes: usage errors exit 2, DataError 3,
NumericError 4.
"""

from __future__ import annotations


class ShapeError(ValueError):
    """Array dimensions incompatible with an operation."""

    def __init__(self, message: str, *shapes):
        if shapes:
            message = f"{message}: " + " vs ".join(str(tuple(s)) for s in shapes)
        super().__init__(message)
        self.shapes = [tuple(s) for s in shapes]


class ConfigError(ValueError):
    """Invalid configuration or argument domain (zero dims, bad enum, ...)."""


class DataError(ValueError):
    """Malformed or inconsistent input data; message names the location."""


class StateError(RuntimeError):
    """Operation sequencing violated (e.g. backward with a stale cache)."""


class NumericError(ArithmeticError):
    """Non-finite value produced where a finite one is required."""
