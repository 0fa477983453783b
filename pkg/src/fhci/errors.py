"""Exception and warning types shared across the package.

Input problems derive from :class:`FhciInputError` (CLI exit code 2),
numerical failures from :class:`FhciNumericalError` (exit code 3).
"""


class FhciError(Exception):
    """Base class for all package errors."""


class FhciInputError(FhciError):
    """Invalid data, options or preconditions."""


class FhciNumericalError(FhciError):
    """A numerical procedure failed to produce a usable result."""


class CsvFormatError(FhciInputError):
    """Malformed input file; the message names the offending row/column."""


class NonPositiveSamplingVariance(FhciInputError):
    def __init__(self, area_id, row):
        self.area_id = area_id
        self.row = row
        super().__init__(f"sampling variance must be > 0 for area {area_id!r} (row {row})")


class RankDeficientDesign(FhciInputError):
    pass


class TooFewAreas(FhciInputError):
    pass


class IndexOutOfRange(FhciInputError, IndexError):
    pass


class InvalidAlpha(FhciInputError):
    pass


class NotBalanced(FhciInputError):
    """Operation requires equal sampling variances across areas."""


class UniquenessConditionViolated(FhciInputError):
    """Area count too small relative to leverage for a unique positive root."""


class UnknownPattern(FhciInputError):
    pass


class SingularNormalEquations(FhciNumericalError):
    pass


class SingularAtZero(FhciNumericalError):
    """Adjustment term is singular at A = 0."""


class NoInteriorMaximum(FhciNumericalError):
    """No stationary point inside (0, inf); not raised for the REML boundary case."""


class OptimizerDidNotConverge(FhciNumericalError):
    pass


class QuadratureFailure(FhciNumericalError):
    pass


class BootstrapDegenerate(FhciNumericalError):
    """Too many bootstrap replicates failed re-estimation."""


class SimulationFailure(FhciNumericalError):
    """Replicate failure rate in a Monte Carlo run exceeded the tolerated share."""


class UniquenessConditionWarning(UserWarning):
    """m <= (4+p)/(1-q_i): the adjusted-likelihood maximum may not be unique."""
