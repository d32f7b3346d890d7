"""Exception types shared across the package."""


class NhcaError(Exception):
    """Base class for all package errors."""

    def to_json(self) -> dict:
        return {"error": type(self).__name__, "message": str(self)}


class RangeError(NhcaError):
    """A level, scale or parameter is outside its supported range."""


class DimensionError(NhcaError):
    """Mixed or unsupported ambient dimensions."""


class ValidationError(NhcaError):
    """Input data violates a structural requirement."""


class ParseError(NhcaError):
    """Malformed input file."""


class DiagonalError(NhcaError):
    """A non-truncated kernel was evaluated on (or applied across) the diagonal."""


class EmptyScanError(NhcaError):
    """A scan window contained nothing to test."""


class InsufficientRangeError(NhcaError):
    """Too few window sizes to derive a verdict."""


class IncompleteRangeError(NhcaError):
    """A level range missed cubes carrying nonzero coefficients."""

    def __init__(self, message: str, missed=()):
        super().__init__(message)
        self.missed = list(missed)


class PreconditionError(NhcaError):
    """Arguments violate an operation's stated precondition."""


class InternalError(NhcaError):
    """Invariant breach inside the library (a bug, not a user error)."""
