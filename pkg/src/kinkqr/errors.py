"""Exception hierarchy shared by all estimation and inference routines."""


class KinkQrError(Exception):
    """Base class for all package errors."""


class UsageError(KinkQrError):
    """Invalid argument values or inconsistent dimensions."""


class RankError(KinkQrError):
    """Design matrix (or a plug-in matrix derived from it) is rank deficient."""


class ConvergenceError(KinkQrError):
    """Solver failed to converge; ``last`` carries the final iterate when available."""

    def __init__(self, message, last=None):
        super().__init__(message)
        self.last = last


class BandwidthError(KinkQrError):
    """Density-estimation bandwidth unusable for the requested quantile level."""


class DegenerateBootstrapError(KinkQrError):
    """Too few usable bootstrap replicates to form an interval."""
