"""Exception hierarchy shared across the package."""


class EPSensingError(Exception):
    """Base class for all package errors."""


class MalformedStateError(EPSensingError, ValueError):
    """Gaussian state with wrong dimensions or an asymmetric covariance."""


class ParameterError(EPSensingError, ValueError):
    """Sensor or scenario parameters violate a documented constraint."""


class PreconditionError(EPSensingError, ValueError):
    """An operation was called outside its domain of validity."""


class SingularResponseError(EPSensingError, ArithmeticError):
    """(theta * Pi - M) is singular or too badly conditioned to solve."""

    def __init__(self, theta, cond=None):
        self.theta = theta
        self.cond = cond
        msg = f"response matrix undefined at theta={theta!r}"
        if cond is not None:
            msg += f" (condition number {cond:.3e})"
        super().__init__(msg)


class IllConditionedCovarianceError(EPSensingError, ArithmeticError):
    """Output covariance too ill-conditioned to invert reliably."""


class DecompositionError(EPSensingError, ArithmeticError):
    """Jordan decomposition failed to reproduce the input matrix."""


class InstabilityError(EPSensingError, RuntimeError):
    """Langevin drift is not strictly stable, or a trajectory diverged."""


class InsufficientDataError(EPSensingError, ValueError):
    """Time series too short for the requested spectral estimate."""


class SweepFailureError(EPSensingError, RuntimeError):
    """Too many grid points of a sweep failed."""


class DomainError(EPSensingError, ValueError):
    """Argument outside the mathematical domain of a function."""
