"""Exception types raised across the package.

All estimation-stage failures derive from :class:`EstimationError` so that
replicate loops (resampling bootstrap, simulation harness) can catch one
base class, count the failure, and move on. Data ingestion problems derive
from :class:`DataError` and are surfaced to the CLI user directly.
"""

from __future__ import annotations


class EstimationError(Exception):
    """Base class for recoverable estimation failures."""


class NonConvergence(EstimationError):
    """Logistic fit did not converge (iteration cap or separation)."""


class SingularInformation(EstimationError):
    """Weighted Gram matrix inside the logistic solver is not invertible."""


class RankDeficient(EstimationError):
    """Outcome design is collinear within the fitting arm."""


class ArmTooSmall(EstimationError):
    """Too few units in an arm to fit its outcome regression."""


class EmptyArm(EstimationError):
    """A treatment arm required by the computation has no units."""


class PositivityViolation(EstimationError):
    """A fitted propensity of exactly 0 or 1 where a tilt needs it finite."""


class SingularJacobian(EstimationError):
    """Outer derivative matrix of the stacked estimating equations is
    numerically singular, so no sandwich variance can be formed."""


class NegativeVariance(EstimationError):
    """Sandwich quadratic form came out negative; reported, never clamped."""


class DegenerateDraws(EstimationError):
    """Interquartile range of the multiplier draws collapsed to zero while
    the draws themselves are not constant."""


class TooManyFailures(EstimationError):
    """More than half of the resampling replicates failed."""


class ZeroPooledSD(EstimationError):
    """Standardized difference requested for a constant covariate."""


class DataError(Exception):
    """Base class for ingestion and configuration problems."""


class ParseError(DataError):
    """Malformed or missing values in the input file."""


class MissingColumn(DataError):
    """A configured column is absent from the input file."""


class NonBinaryTreatment(DataError):
    """Treatment column contains values other than 0 and 1."""
