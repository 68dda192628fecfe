"""Exception hierarchy.

Computational failures derive from :class:`ComputationError`; malformed
input files derive from :class:`ConfigError`. The CLI maps the two onto
exit codes 1 and 2.
"""


class WavemapError(Exception):
    """Base class for every error raised by this package."""


class ComputationError(WavemapError):
    pass


class ConfigError(WavemapError):
    def __init__(self, message, line=None, column=None, path=None):
        self.line = line
        self.column = column
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}:"
        if line is not None:
            where += f"{line}:{column if column is not None else 1}: "
        super().__init__(where + message)


# target geometry
class NoEquator(ComputationError):
    pass


class NotOdd(ComputationError):
    pass


class BadNormalization(ComputationError):
    pass


class DerivativeUnavailable(ComputationError):
    pass


# quadrature / stability
class GridTooCoarse(ComputationError):
    pass


class EndpointSingular(ComputationError):
    pass


class ZeroDenominator(ComputationError):
    pass


class DivergentEnergy(ComputationError):
    pass


# profiles
class SeriesDiverged(ComputationError):
    pass


class BlowupBeforeEnd(ComputationError):
    pass


class BracketInvalid(ComputationError):
    pass


class NonConvergence(ComputationError):
    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class InsufficientTail(ComputationError):
    pass


# energy minimization
class BoundaryMismatch(ComputationError):
    pass


# wave evolution
class CFLViolation(ComputationError):
    pass


class NaNDetected(ComputationError):
    def __init__(self, message, node=None, time=None):
        super().__init__(message)
        self.node = node
        self.time = time


class ConeOutOfDomain(ComputationError):
    pass


class ProfileNotMatching(ComputationError):
    pass
