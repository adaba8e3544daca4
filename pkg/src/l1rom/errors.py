"""Exception types shared across the package.

Each one also derives from the closest builtin, so callers may catch either.
"""


class L1romError(Exception):
    """Base class for every error raised by this package."""


class DimensionMismatch(L1romError, ValueError):
    pass


class RankDeficient(L1romError, ValueError):
    """Raised when a least-squares matrix has a (numerically) zero pivot in R."""


class LineSearchFailure(L1romError, RuntimeError):
    pass


class Stalled(L1romError, RuntimeError):
    """The simplex method exceeded its pivot budget."""


class NewtonDiverged(L1romError, RuntimeError):
    pass


class NonPhysicalState(L1romError, ValueError):
    """Negative density or pressure in an Euler state."""


class DegenerateDictionary(L1romError, ValueError):
    pass


class ConfigInvalid(L1romError, ValueError):
    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))
