"""Exception types shared across the package."""


class ObsbankError(Exception):
    """Base class for all estimator-bank errors."""


class NotDetectableError(ObsbankError):
    """An (A, C) pair admits no stabilizing output-injection gain.

    Carries the violating eigenvalue and, when the failure came from a
    sensor-subset sweep, the offending subset.
    """

    def __init__(self, message, eigenvalue=None, subset=None):
        super().__init__(message)
        self.eigenvalue = eigenvalue
        self.subset = subset


class UnstableError(ObsbankError):
    """A strictly stable matrix was required but not supplied."""


class NoConvergenceError(ObsbankError):
    """An iterative solver hit its iteration cap without meeting tolerance."""


class NoValidEstimatorsError(ObsbankError):
    """Every local estimator has been invalidated; fusion is impossible."""


class NoViableSubsetsError(ObsbankError):
    """Lenient bank construction filtered out every candidate subset."""


class DetectabilityHoldsError(ObsbankError):
    """The indistinguishable-trajectory construction needs a detectability
    gap that this system does not have."""
