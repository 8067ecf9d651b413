"""Exception types shared across the package.

Every failure raised on purpose by this package derives from
:class:`AngcalError`, so callers can catch one base class at the CLI
boundary and map it to an exit code.
"""


class AngcalError(Exception):
    """Base class for all package-specific failures."""


class ContractError(AngcalError):
    """Inputs violate an operation's calling contract (shapes, emptiness, ranges)."""


class CovarianceError(AngcalError):
    """Covariance specification does not yield a symmetric positive-definite matrix."""


class SingularCovariance(CovarianceError):
    """Covariance is numerically singular relative to its largest eigenvalue."""


class IngestError(AngcalError):
    """CSV ingestion failed; carries a 1-based (row, col) location when known."""

    def __init__(self, message, row=None, col=None):
        loc = ""
        if row is not None:
            loc = f" (row {row}" + (f", col {col})" if col is not None else ")")
        super().__init__(message + loc)
        self.row = row
        self.col = col


class FitError(AngcalError):
    """Optimization produced a non-finite objective or failed to converge."""


class SingularSystem(AngcalError):
    """A linear system that should be positive definite could not be factorized."""


class DegenerateModel(AngcalError):
    """Model state unusable for the requested operation (e.g. zero norm weight)."""


class DegenerateHoldout(AngcalError):
    """Holdout set cannot identify the requested quantity (e.g. one-class labels)."""


class UnsupportedClosedForm(AngcalError):
    """A closed-form evaluation was requested for a link without one."""


class CollinearIndices(AngcalError):
    """Fitted index directions are numerically collinear in the Sigma inner product."""


class LinkRangeError(AngcalError):
    """A link returned values outside [0, 1]."""
