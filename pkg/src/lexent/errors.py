"""Exception hierarchy shared across the toolkit.

Two branches matter to callers: data errors (malformed or mismatched inputs,
CLI exit code 2) and numerical errors (degenerate or diverging computations,
CLI exit code 3).
"""


class LexentError(Exception):
    """Base class for all toolkit errors."""


class LexentDataError(LexentError):
    """Input data is malformed, inconsistent, or unusable."""


class LexentNumericalError(LexentError):
    """A computation is undefined or failed on the given inputs."""
