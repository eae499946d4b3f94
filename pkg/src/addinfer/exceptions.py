"""Exception hierarchy shared by every module of the package."""


class AddinferError(Exception):
    """Base class for all package errors."""


class NumericalError(AddinferError):
    """A computation failed for numerical reasons (CLI exit code 2)."""


class InvalidBandwidthError(AddinferError, ValueError):
    pass


class DegenerateBandwidthError(NumericalError):
    pass


class InsufficientLocalDataError(NumericalError):
    pass


class BandwidthTooSmallError(NumericalError):
    """Raised when a smoother cannot be built or its modified form has a unit eigenvalue."""

    def __init__(self, message, *, grid_point=None, eigenvalue=None):
        super().__init__(message)
        self.grid_point = grid_point
        self.eigenvalue = eigenvalue


class DegenerateDesignError(AddinferError, ValueError):
    pass


class DegenerateFitError(NumericalError):
    pass


class DegenerateTestError(NumericalError):
    pass


class IncompatibleFitsError(AddinferError, ValueError):
    pass


class LossOverflowError(NumericalError):
    def __init__(self, message, *, index=None):
        super().__init__(message)
        self.index = index


class QuadratureError(NumericalError):
    pass


class BandwidthGridTooSmallError(NumericalError):
    pass


class BootstrapFailureError(NumericalError):
    pass
