"""Exception types raised by the brctc package."""


class BRCTCError(Exception):
    """Base class for all package errors."""


class InfeasibleAlignment(BRCTCError, ValueError):
    """No path of the requested length collapses to the target labels."""


class DegenerateObjective(BRCTCError, ArithmeticError):
    """The (risk-weighted) path mass is exactly zero, so its log is undefined."""


class NumericalCancellation(BRCTCError, ArithmeticError):
    """A log-domain subtraction lost all significant digits."""


class MissingBias(BRCTCError, ValueError):
    """Early-emission risk requested without the bias frame."""


class TooLarge(BRCTCError, ValueError):
    """Exhaustive enumeration would exceed the configured budget."""


class LengthMismatch(BRCTCError, ValueError):
    """Two sequences that must share a length do not."""


class NoMatchedTokens(BRCTCError, ValueError):
    """The hypothesis/reference matching is empty."""


class DivergedLoss(BRCTCError, FloatingPointError):
    """Training produced a non-finite objective."""


class ParseError(BRCTCError, ValueError):
    """A record or config file could not be parsed."""
