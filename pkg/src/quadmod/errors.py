"""Exception and warning types shared across quadmod."""


class QuadmodError(Exception):
    """Base class for all quadmod errors."""


class CountUnreachable(QuadmodError):
    """A lattice carve cannot produce exactly the requested number of points."""

    def __init__(self, message, shells=None):
        super().__init__(message)
        # list of (squared_norm, population) pairs around the cut
        self.shells = shells or []


class InvalidCount(QuadmodError):
    """The point count does not factor into the requested grid."""


class MissingBits(QuadmodError):
    """Eb/N0 conversion requested without a bits-per-symbol figure."""


class DomainError(QuadmodError, ValueError):
    """An argument lies outside the domain of the function."""


class NoBracket(QuadmodError):
    """An SER curve never crosses the requested target."""

    def __init__(self, message, curve_name=None):
        super().__init__(message)
        self.curve_name = curve_name


class ConfigError(QuadmodError):
    """Invalid experiment configuration."""


class NonConvergence(UserWarning):
    """Iterative optimizer stopped before its step size collapsed."""


class LossOfLock(UserWarning):
    """Timing loop drifted more than half a symbol from the true offset."""
