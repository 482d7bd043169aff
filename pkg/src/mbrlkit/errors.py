"""Exception hierarchy shared across the package."""

from __future__ import annotations


class MbrlError(Exception):
    """Base class for every error raised by mbrlkit."""


class ContractError(MbrlError, ValueError):
    """Argument shape or domain does not satisfy an operation's precondition."""


class EmptySourceError(MbrlError):
    """Sampling was requested from an empty container."""


class UsageError(MbrlError, RuntimeError):
    """An object was used out of order, e.g. stepping a finished episode."""


class FitError(MbrlError):
    """A dynamics model could not be fitted to the supplied data."""


class NonFiniteError(MbrlError, FloatingPointError):
    """A NaN or infinity showed up where finite numbers are required."""


class ConvergenceError(MbrlError):
    """An iterative solver gave up. ``best`` carries the best iterate found."""

    def __init__(self, message: str, best=None):
        super().__init__(message)
        self.best = best


class ConfigError(MbrlError):
    """Base for configuration problems; ``path`` names the offending key."""

    kind = "config"

    def __init__(self, message: str, path: str = ""):
        self.path = path
        text = f"{path}: {message}" if path else message
        super().__init__(text)


class ConfigSyntaxError(ConfigError):
    kind = "syntax"

    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        self.line = line
        self.column = column
        where = f"line {line}, column {column}" if line is not None else ""
        super().__init__(message, where)


class UnknownKeyError(ConfigError):
    kind = "unknown_key"


class UnresolvedReferenceError(ConfigError):
    kind = "unresolved_reference"


class IncompatibleError(ConfigError):
    kind = "incompatible"


class ConfigValueError(ConfigError):
    kind = "invalid_value"
