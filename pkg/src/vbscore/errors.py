"""Exception types shared across the package."""
from __future__ import annotations


class VBScoreError(Exception):
    """Base class for all errors raised by this package."""


class InvalidInput(VBScoreError, ValueError):
    """An argument violates an operation's preconditions."""


class ParseError(VBScoreError):
    """A line of an input file could not be parsed.

    Carries the path and 1-based line number so CLI error messages are
    addressable.
    """

    def __init__(self, message: str, *, path: str = "", line: int = 0):
        self.path = path
        self.line = line
        if path and line:
            prefix = f"{path}:{line}: "
        elif path:
            prefix = f"{path}: "
        else:
            prefix = ""
        super().__init__(f"{prefix}{message}")


class ValidationError(VBScoreError):
    """Input parsed but violates a semantic constraint (duplicate ids,
    non-contiguous ranks, mismatched query sets, ...)."""


class TaggerUnavailable(VBScoreError):
    """A tagger backend failed after exhausting its retries."""


class EstimationFailed(VBScoreError):
    """No usable replica survived; nothing can be estimated."""
