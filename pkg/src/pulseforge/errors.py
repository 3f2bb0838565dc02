"""Exception hierarchy shared across the package."""


class ValidationError(ValueError):
    """Input violates a documented precondition or invariant."""


class InsufficientDataError(ValidationError):
    """Not enough samples/intervals/peaks to compute the requested quantity."""


class ParseError(ValueError):
    """On-disk artifact (container, weights, trace) is malformed."""


class NumericError(RuntimeError):
    """A computation produced non-finite values; carries the offending stage."""


class ProtocolError(ValueError):
    """Event stream violates its ordering contract (e.g. non-monotone time)."""
