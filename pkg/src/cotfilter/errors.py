"""Exception types shared across the package.

Numerical failures raise subclasses of :class:`NumericsError` so callers can
distinguish "the math broke" from ordinary usage mistakes, which surface as
:class:`ConfigError` (a ``ValueError``).
"""


class NumericsError(RuntimeError):
    """Base class for numerical failures in matrix or solver routines."""


class DimMismatchError(NumericsError):
    """Operands have incompatible shapes."""


class NotPSDError(NumericsError):
    """A matrix required to be positive semidefinite has a negative
    eigenvalue beyond tolerance."""


class NotPDError(NotPSDError):
    """A matrix required to be positive definite is not."""


class SingularSubmatrixError(NumericsError):
    """A leading principal submatrix is singular, so an LDL pivot is
    undefined."""


class DegenerateVError(NumericsError):
    """The predicted joint covariance is not positive semidefinite."""


class SingularVyyError(NumericsError):
    """The observation block of the predicted covariance is singular, so the
    update gain is undefined."""


class SingularKError(NumericsError):
    """The candidate innovation covariance is singular."""


class NearSingularBuresError(NumericsError):
    """An inner matrix of a Bures-type square root is too close to singular
    for the analytic gradient; add jitter or enable the finite-difference
    fallback."""


class InfeasibleStartError(NumericsError):
    """No strictly feasible starting point could be constructed."""


class NumericalBreakdownError(NumericsError):
    """The solver line search could not recover a feasible iterate."""


class DegenerateDataError(NumericsError):
    """Observed data are inconsistent with a nondegenerate model (NaNs,
    singular predicted covariances, or an unrepairable M-step)."""


class DataGapError(ValueError):
    """A price series has a calendar gap larger than a weekend/holiday
    break."""


class InsufficientHistoryError(ValueError):
    """A price series is too short for the requested warmup and window."""


class ConfigError(ValueError):
    """Invalid configuration value or unknown configuration key."""
